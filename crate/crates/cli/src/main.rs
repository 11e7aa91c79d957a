//! `subtrain` — command-line front end for random-subspace training and
//! intrinsic-dimension measurement.
//!
//! Six subcommands:
//!
//! * `train` — one training run, direct or inside a random subspace.
//! * `sweep` — sweep subspace dimension d and estimate where subspace
//!   training first matches a fraction of the direct baseline.
//! * `compress` — train a subspace classifier and store it as seeds plus
//!   d coefficients.
//! * `eval-checkpoint` — reload such a checkpoint and evaluate it.
//! * `es` — evolution-strategies training for control policies.
//! * `bench-proj` — wall-clock comparison of the projection kinds.
//!
//! Every run that writes files also writes a `manifest.json` capturing
//! the full configuration, seeds, and library version; CSV outputs start
//! with a `# manifest: <digest>` line tying them to it. Reruns with the
//! same configuration land in the same directory.
//!
//! Exit codes: 0 on success (including sweeps whose threshold is never
//! reached — that is a result, not an error), 1 on runtime failures,
//! 2 on usage errors (unknown flags, contradictory options, missing
//! dataset files).

mod manifest;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use subtrain_core::codec;
use subtrain_core::escontrol::{es_train, CartPoleReward, CartPoleSweep, ESConfig, EsTarget};
use subtrain_core::estimator::{
    run_sweep, BaselineMode, ClassifierSweep, Crossing, LinearSweep, SweepConfig, SweepReport,
    SweepTask, ToySweep,
};
use subtrain_core::nn::{self, Architecture};
use subtrain_core::optimize::{
    evaluate, train_classifier, OptimizerConfig, OptimizerKind, TrainResult, TrainTarget,
};
use subtrain_core::projection::{make_projection, ProjectionKind};
use subtrain_core::rng::Stream;
use subtrain_core::subspace::{cell_seeds, SubspaceModel};
use subtrain_core::tasks::cartpole::SOLVED_RETURN;
use subtrain_core::tasks::mnist::MNIST_FILES;
use subtrain_core::tasks::{linear_solution_problem, mnist_dataset, Dataset};

use manifest::RunManifest;

/// Environment variable naming the MNIST directory when `--data-dir`
/// is not passed.
const MNIST_ENV: &str = "SUBTRAIN_MNIST_DIR";
const DEFAULT_MNIST_DIR: &str = "data/mnist";
const DEFAULT_MNIST_ARCH: &str = "fc:784-200-200-10";
const DEFAULT_POLICY_ARCH: &str = "fc:4-16-2";

// ---------------------------------------------------------------------------
// Error/exit plumbing
// ---------------------------------------------------------------------------

/// CLI failures split by exit code: usage errors (2) versus runtime
/// errors (1). Anything implementing `std::error::Error` converts into
/// the runtime class.
enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<subtrain_core::Error> for CliError {
    fn from(e: subtrain_core::Error) -> Self {
        CliError::Runtime(anyhow::Error::new(e))
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

type CliResult = Result<(), CliError>;

// ---------------------------------------------------------------------------
// Argument grammar
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "subtrain",
    version,
    about = "Random-subspace training and intrinsic-dimension measurement",
    propagate_version = true
)]
struct Cli {
    /// Cap the worker-thread count (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one model directly or inside a random subspace.
    Train(TrainCmd),
    /// Sweep subspace dimension and estimate the intrinsic dimension.
    Sweep(SweepCmd),
    /// Train a subspace classifier and save it as seeds + coefficients.
    Compress(CompressCmd),
    /// Inspect a compressed checkpoint and evaluate it on a dataset split.
    EvalCheckpoint(EvalCheckpointCmd),
    /// Train a control policy with antithetic evolution strategies.
    Es(EsCmd),
    /// Time projection construction and application across sizes.
    BenchProj(BenchProjCmd),
}

/// What to train or sweep: `toy`, `linear:<codim>`, `mnist`, `cartpole`.
#[derive(Debug, Clone)]
enum TaskSpec {
    Toy,
    Linear(usize),
    Mnist,
    CartPole,
}

impl TaskSpec {
    fn name(&self) -> String {
        match self {
            TaskSpec::Toy => "toy".into(),
            TaskSpec::Linear(c) => format!("linear:{c}"),
            TaskSpec::Mnist => "mnist".into(),
            TaskSpec::CartPole => "cartpole".into(),
        }
    }
}

fn parse_task(s: &str) -> Result<TaskSpec, String> {
    match s {
        "toy" => Ok(TaskSpec::Toy),
        "mnist" => Ok(TaskSpec::Mnist),
        "cartpole" => Ok(TaskSpec::CartPole),
        _ => match s.strip_prefix("linear:") {
            Some(c) => {
                let codim: usize =
                    c.parse().map_err(|_| format!("bad codimension `{c}` in `{s}`"))?;
                if codim == 0 {
                    return Err("linear task codimension must be at least 1".into());
                }
                Ok(TaskSpec::Linear(codim))
            }
            None => Err(format!(
                "unknown task `{s}` (expected toy, linear:<codim>, mnist, or cartpole)"
            )),
        },
    }
}

fn parse_proj(s: &str) -> Result<ProjectionKind, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_baseline(s: &str) -> Result<BaselineMode, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_opt_kind(s: &str) -> Result<OptimizerKind, String> {
    match s {
        "sgd" => Ok(OptimizerKind::Sgd),
        "momentum" => Ok(OptimizerKind::Momentum),
        "adam" => Ok(OptimizerKind::Adam),
        _ => Err(format!("unknown optimizer `{s}` (expected sgd, momentum, or adam)")),
    }
}

/// Supervised-training recipe shared by train/sweep/compress.
#[derive(Args, Debug, Clone)]
struct RecipeArgs {
    /// Optimizer: sgd, momentum, or adam.
    #[arg(long, default_value = "adam", value_parser = parse_opt_kind)]
    optimizer: OptimizerKind,

    /// Learning rate.
    #[arg(long, default_value_t = 0.001)]
    lr: f64,

    /// Momentum coefficient (momentum optimizer only).
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,

    /// L2 penalty on the trained coordinates.
    #[arg(long, default_value_t = 0.0)]
    l2: f64,

    /// Training epochs.
    #[arg(long, default_value_t = 20)]
    epochs: usize,

    /// Mini-batch size.
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
}

impl RecipeArgs {
    fn to_config(&self, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            learning_rate: self.lr,
            momentum: self.momentum,
            l2_penalty: self.l2,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            ..OptimizerConfig::default()
        }
    }

    fn describe(&self) -> String {
        format!(
            "{} lr {} (epochs {}, batch {})",
            self.optimizer, self.lr, self.epochs, self.batch_size
        )
    }

    fn to_json(&self) -> serde_json::Value {
        json!({
            "optimizer": self.optimizer.to_string(),
            "lr": self.lr,
            "momentum": self.momentum,
            "l2": self.l2,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
        })
    }
}

/// Dataset location and controlled corruptions.
#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Directory holding the four MNIST idx files (falls back to
    /// $SUBTRAIN_MNIST_DIR, then data/mnist).
    #[arg(long)]
    data_dir: Option<PathBuf>,

    /// Apply one fixed random permutation to every image's pixels.
    #[arg(long)]
    shuffle_pixels: bool,

    /// Replace this fraction of training labels with random ones
    /// (performance then means training accuracy, i.e. memorization).
    #[arg(long)]
    shuffle_labels: Option<f64>,
}

impl DataArgs {
    fn resolve_dir(&self) -> PathBuf {
        if let Some(d) = &self.data_dir {
            return d.clone();
        }
        if let Ok(d) = std::env::var(MNIST_ENV) {
            if !d.is_empty() {
                return PathBuf::from(d);
            }
        }
        PathBuf::from(DEFAULT_MNIST_DIR)
    }

    /// Loads MNIST with any requested corruption applied, turning missing
    /// files into a usage error (exit 2) with a recovery hint.
    fn load(&self, seed: u64) -> Result<Dataset, CliError> {
        let dir = self.resolve_dir();
        let missing: Vec<&str> = MNIST_FILES
            .iter()
            .copied()
            .filter(|f| !dir.join(f).is_file())
            .collect();
        if !missing.is_empty() {
            return Err(usage(format!(
                "MNIST data not found under {} (missing {}); pass --data-dir, set {}, \
                 or run scripts/fetch_mnist.sh",
                dir.display(),
                missing.join(", "),
                MNIST_ENV
            )));
        }
        let mut ds = mnist_dataset(&dir)?;
        if self.shuffle_pixels {
            ds.shuffle_pixels(seed);
        }
        if let Some(fraction) = self.shuffle_labels {
            ds.shuffle_labels(seed, fraction)?;
        }
        Ok(ds)
    }

    fn to_json(&self) -> serde_json::Value {
        json!({
            "data_dir": self.resolve_dir().display().to_string(),
            "shuffle_pixels": self.shuffle_pixels,
            "shuffle_labels": self.shuffle_labels,
        })
    }
}

/// Evolution-strategies knobs used by `sweep --task cartpole` (the `es`
/// command exposes the same quantities under unprefixed names).
#[derive(Args, Debug, Clone)]
struct EsArgs {
    /// Perturbations per ES iteration (total, counted over both
    /// antithetic directions; must be even).
    #[arg(long, default_value_t = 64)]
    pop: usize,

    /// Perturbation standard deviation.
    #[arg(long, default_value_t = 0.02)]
    sigma: f64,

    /// ES iterations per cell.
    #[arg(long, default_value_t = 300)]
    es_iters: usize,

    /// Learning rate of the Adam step applied to the ES gradient.
    #[arg(long, default_value_t = 0.05)]
    es_lr: f64,

    /// Weight decay applied alongside the ES gradient.
    #[arg(long, default_value_t = 0.0)]
    es_l2: f64,

    /// Episodes per post-update policy evaluation.
    #[arg(long, default_value_t = 30)]
    eval_episodes: usize,
}

impl EsArgs {
    fn to_config(&self, seed: u64) -> ESConfig {
        ESConfig {
            population: self.pop,
            sigma: self.sigma,
            optimizer: OptimizerConfig::adam(self.es_lr),
            iterations: self.es_iters,
            l2_penalty: self.es_l2,
            eval_episodes: self.eval_episodes,
            seed,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        json!({
            "pop": self.pop,
            "sigma": self.sigma,
            "es_iters": self.es_iters,
            "es_lr": self.es_lr,
            "es_l2": self.es_l2,
            "eval_episodes": self.eval_episodes,
        })
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args)]
struct TrainCmd {
    /// Task: toy, linear:<codim>, or mnist.
    #[arg(long, value_parser = parse_task)]
    task: TaskSpec,

    /// Network architecture (mnist only; default fc:784-200-200-10).
    #[arg(long, value_parser = parse_arch)]
    arch: Option<Architecture>,

    /// Projection kind: dense, sparse, or fastfood.
    #[arg(long, default_value = "dense", value_parser = parse_proj)]
    proj: ProjectionKind,

    /// Subspace dimension (mutually exclusive with --direct).
    #[arg(long)]
    d: Option<usize>,

    /// Train all D parameters directly instead of a subspace.
    #[arg(long)]
    direct: bool,

    /// Master seed: initialization, projection, data order.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Inner optimizer iterations for the objective tasks (toy, linear).
    #[arg(long)]
    iterations: Option<usize>,

    /// Ambient dimension D of the linear task.
    #[arg(long, default_value_t = 200)]
    d_full: usize,

    #[command(flatten)]
    recipe: RecipeArgs,

    #[command(flatten)]
    data: DataArgs,

    /// Save the trained subspace model to this file (requires --d).
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Directory run outputs are written under.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

/// Direct vs subspace choice shared by several commands.
enum ParamMode {
    Direct,
    Subspace(usize),
}

fn param_mode(d: Option<usize>, direct: bool) -> Result<ParamMode, CliError> {
    match (d, direct) {
        (Some(d), false) => Ok(ParamMode::Subspace(d)),
        (None, true) => Ok(ParamMode::Direct),
        _ => Err(usage("pass exactly one of --d <dim> or --direct")),
    }
}

/// Compact formatter for quantities spanning accuracies (~0.93) and
/// objective performances (~1e-19).
fn fmt_perf(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else if x.abs() < 1e-3 || x.abs() >= 1e6 {
        format!("{x:.3e}")
    } else {
        format!("{x:.4}")
    }
}

fn cmd_train(args: TrainCmd) -> CliResult {
    let mode = param_mode(args.d, args.direct)?;
    match &args.task {
        TaskSpec::Toy => {
            let mut task = ToySweep { kind: args.proj, ..ToySweep::default() };
            if let Some(it) = args.iterations {
                task.iterations = it;
            }
            train_objective_cell(&task, &mode, args.seed, None)
        }
        TaskSpec::Linear(codim) => {
            let problem = linear_solution_problem(args.d_full, *codim, args.seed)?;
            let mut task = LinearSweep::new(problem);
            task.kind = args.proj;
            if let Some(it) = args.iterations {
                task.iterations = it;
            }
            // The least-squares restriction of the objective to the cell's
            // subspace is solvable exactly; report that floor next to the
            // trained loss so convergence quality is visible.
            let oracle = match mode {
                ParamMode::Subspace(d) => {
                    let point = task.point_for_cell(d, args.seed)?;
                    Some(task.problem.restricted_minimum(&point)?)
                }
                ParamMode::Direct => None,
            };
            train_objective_cell(&task, &mode, args.seed, oracle)
        }
        TaskSpec::Mnist => train_mnist(args, mode),
        TaskSpec::CartPole => Err(usage("cartpole trains through the `es` command")),
    }
}

/// Runs one toy/linear cell (or its direct baseline) and prints the
/// resulting performance. These runs finish in milliseconds and write no
/// files.
fn train_objective_cell(
    task: &dyn SweepTask,
    mode: &ParamMode,
    seed: u64,
    oracle_loss: Option<f64>,
) -> CliResult {
    println!("task         {}  (D = {})", task.id(), task.d_full());
    let perf = match mode {
        ParamMode::Direct => {
            println!("mode         direct");
            task.baseline_performance(seed)?
        }
        ParamMode::Subspace(d) => {
            if *d > task.d_full() {
                return Err(usage(format!(
                    "--d {} exceeds the task's full dimension {}",
                    d,
                    task.d_full()
                )));
            }
            println!("mode         subspace  d={d}  {}", task.projection_kind());
            task.run_cell(*d, seed)?
        }
    };
    // Objective-task performance is exp(-loss), so the loss is recoverable.
    println!("loss         {}", fmt_perf(-perf.ln()));
    if let Some(floor) = oracle_loss {
        println!("oracle loss  {}  (least-squares floor of this subspace)", fmt_perf(floor));
    }
    println!("performance  {}", fmt_perf(perf));
    Ok(())
}

/// Shared by `train --task mnist` and `compress`: train a classifier in
/// the requested mode and hand back the result plus the subspace model
/// (when there is one).
fn run_classifier(
    arch: &Architecture,
    proj: ProjectionKind,
    mode: &ParamMode,
    seed: u64,
    recipe: &OptimizerConfig,
    ds: &Dataset,
) -> Result<(TrainResult, Option<SubspaceModel>), CliError> {
    if arch.input_len() != ds.input_dim() {
        return Err(usage(format!(
            "architecture expects {}-dimensional inputs, dataset has {}",
            arch.input_len(),
            ds.input_dim()
        )));
    }
    match mode {
        ParamMode::Direct => {
            let mut params = nn::init_params(arch, seed);
            let res =
                train_classifier(TrainTarget::Direct { arch, params: &mut params }, ds, recipe)?;
            Ok((res, None))
        }
        ParamMode::Subspace(d) => {
            let (seed_theta0, seed_proj) = cell_seeds(seed);
            let mut sm = SubspaceModel::new(arch.clone(), proj, *d, seed_theta0, seed_proj)?;
            let res = train_classifier(TrainTarget::Subspace(&mut sm), ds, recipe)?;
            Ok((res, Some(sm)))
        }
    }
}

fn history_csv(res: &TrainResult) -> String {
    let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc,wall_ms\n");
    for e in &res.history {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc, e.wall_ms
        )
        .expect("string write");
    }
    s
}

fn train_mnist(args: TrainCmd, mode: ParamMode) -> CliResult {
    if args.checkpoint.is_some() && matches!(mode, ParamMode::Direct) {
        return Err(usage(
            "--checkpoint requires --d: only subspace models have a seed-based compressed form",
        ));
    }
    let arch = match &args.arch {
        Some(a) => a.clone(),
        None => DEFAULT_MNIST_ARCH.parse().expect("default architecture parses"),
    };
    let ds = args.data.load(args.seed)?;
    let recipe = args.recipe.to_config(args.seed);

    let mode_desc = match &mode {
        ParamMode::Direct => format!("direct  (D = {})", arch.param_count()),
        ParamMode::Subspace(d) => format!("subspace  d={d}  {}", args.proj),
    };
    println!("task         {}  {}", ds.name, arch);
    println!("mode         {mode_desc}");
    println!("recipe       {}", args.recipe.describe());

    let started = Instant::now();
    let (res, sm) = run_classifier(&arch, args.proj, &mode, args.seed, &recipe, &ds)?;

    let mut outputs = vec!["history.csv".to_string()];
    if let Some(p) = &args.checkpoint {
        outputs.push(p.display().to_string());
    }
    let m = RunManifest::new(
        "train",
        json!({
            "task": args.task.name(),
            "arch": arch.to_string(),
            "proj": args.proj.to_string(),
            "mode": match &mode {
                ParamMode::Direct => json!("direct"),
                ParamMode::Subspace(d) => json!({"d": d}),
            },
            "recipe": args.recipe.to_json(),
            "data": args.data.to_json(),
        }),
        json!({ "seed": args.seed }),
        outputs,
    );
    let dir = args.out.join(format!("train-{}", m.run_id()));
    m.write(&dir)?;
    manifest::write_csv(&dir, "history.csv", &m, &history_csv(&res))?;

    if res.diverged {
        println!("DIVERGED     loss left the finite range; performance recorded as 0");
    }
    println!(
        "final        val acc {}   val loss {}",
        fmt_perf(res.final_val_acc),
        fmt_perf(res.final_val_loss)
    );
    println!(
        "best         val acc {}   train acc {}",
        fmt_perf(res.best_val_acc),
        fmt_perf(res.best_train_acc)
    );
    println!("wall         {:.1} s", started.elapsed().as_secs_f64());
    println!("outputs      {}", dir.join("history.csv").display());

    if let Some(path) = &args.checkpoint {
        let sm = sm.expect("subspace mode was enforced above");
        let bytes = codec::save_compressed(&sm, path)?;
        let direct = codec::direct_size_bytes(sm.arch());
        println!(
            "checkpoint   {}  ({} bytes; direct {} bytes; ratio {:.1}x)",
            path.display(),
            bytes,
            direct,
            direct as f64 / bytes as f64
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SweepCmd {
    /// Task: toy, linear:<codim>, mnist, or cartpole.
    #[arg(long, value_parser = parse_task)]
    task: TaskSpec,

    /// Network architecture (mnist/cartpole; defaults per task).
    #[arg(long, value_parser = parse_arch)]
    arch: Option<Architecture>,

    /// Projection kind: dense, sparse, or fastfood.
    #[arg(long, default_value = "dense", value_parser = parse_proj)]
    proj: ProjectionKind,

    /// Comma-separated subspace dimensions, strictly ascending
    /// (defaults per task).
    #[arg(long, value_delimiter = ',')]
    d_list: Option<Vec<usize>>,

    /// Training runs per dimension.
    #[arg(long, default_value_t = 3)]
    runs: usize,

    /// Crossing threshold as a fraction of baseline performance.
    #[arg(long, default_value_t = 0.9)]
    threshold_ratio: f64,

    /// Baseline: `direct` (train all D parameters) or `global:<value>`.
    #[arg(long, default_value = "direct", value_parser = parse_baseline)]
    baseline: BaselineMode,

    /// Master seed; every cell derives its own stream from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Cap on trained cells (must cover the initial grid; refinement
    /// stops early when spent).
    #[arg(long)]
    budget_cells: Option<usize>,

    /// Bootstrap resamples behind the crossing's uncertainty estimate.
    #[arg(long, default_value_t = 50)]
    bootstrap: usize,

    /// Disable geometric-midpoint refinement around the crossing.
    #[arg(long)]
    no_refine: bool,

    /// Stop refining once the crossing bracket's ratio is at most this.
    #[arg(long, default_value_t = 1.5)]
    bracket_ratio: f64,

    /// Significance level of the baseline-indistinguishability test.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,

    /// Relative-tolerance fallback of that test.
    #[arg(long, default_value_t = 1e-3)]
    rtol: f64,

    /// Ambient dimension D of the linear task.
    #[arg(long, default_value_t = 200)]
    d_full: usize,

    /// Inner optimizer iterations for the objective tasks (toy, linear).
    #[arg(long)]
    iterations: Option<usize>,

    #[command(flatten)]
    recipe: RecipeArgs,

    #[command(flatten)]
    data: DataArgs,

    #[command(flatten)]
    es: EsArgs,

    /// Directory run outputs are written under.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

/// Initial d grid used when `--d-list` is absent.
fn default_grid(task: &TaskSpec, d_full: usize) -> Vec<usize> {
    match task {
        // The toy crossing sits at 10; a unit grid shows the whole front.
        TaskSpec::Toy => (1..=12).collect(),
        // Bracket the solution-set codimension geometrically; refinement
        // closes in on the exact crossing.
        TaskSpec::Linear(c) => {
            let mut g = vec![(c / 2).max(1), *c, (2 * c).min(d_full)];
            g.dedup();
            g
        }
        TaskSpec::Mnist => vec![100, 200, 400, 750, 1500],
        TaskSpec::CartPole => vec![2, 8, 32],
    }
}

fn cmd_sweep(args: SweepCmd) -> CliResult {
    let d_values = match &args.d_list {
        Some(g) => g.clone(),
        None => default_grid(&args.task, args.d_full),
    };

    // Task construction, plus the task-specific slice of the manifest.
    let (task, task_json): (Box<dyn SweepTask>, serde_json::Value) = match &args.task {
        TaskSpec::Toy => {
            let mut t = ToySweep { kind: args.proj, ..ToySweep::default() };
            if let Some(it) = args.iterations {
                t.iterations = it;
            }
            let j = json!({ "iterations": t.iterations });
            (Box::new(t), j)
        }
        TaskSpec::Linear(codim) => {
            let problem = linear_solution_problem(args.d_full, *codim, args.seed)?;
            let mut t = LinearSweep::new(problem);
            t.kind = args.proj;
            if let Some(it) = args.iterations {
                t.iterations = it;
            }
            let j = json!({ "d_full": args.d_full, "iterations": t.iterations });
            (Box::new(t), j)
        }
        TaskSpec::Mnist => {
            let arch = match &args.arch {
                Some(a) => a.clone(),
                None => DEFAULT_MNIST_ARCH.parse().expect("default architecture parses"),
            };
            let ds = args.data.load(args.seed)?;
            if arch.input_len() != ds.input_dim() {
                return Err(usage(format!(
                    "architecture expects {}-dimensional inputs, dataset has {}",
                    arch.input_len(),
                    ds.input_dim()
                )));
            }
            let j = json!({
                "arch": arch.to_string(),
                "recipe": args.recipe.to_json(),
                "data": args.data.to_json(),
            });
            let t = ClassifierSweep {
                dataset: Arc::new(ds),
                arch,
                kind: args.proj,
                recipe: args.recipe.to_config(args.seed),
            };
            (Box::new(t), j)
        }
        TaskSpec::CartPole => {
            let arch = match &args.arch {
                Some(a) => a.clone(),
                None => DEFAULT_POLICY_ARCH.parse().expect("default architecture parses"),
            };
            let j = json!({ "arch": arch.to_string(), "es": args.es.to_json() });
            let t = CartPoleSweep::new(arch, args.proj, args.es.to_config(args.seed))?;
            (Box::new(t), j)
        }
    };

    let cfg = SweepConfig {
        d_values: d_values.clone(),
        runs_per_d: args.runs,
        threshold_ratio: args.threshold_ratio,
        baseline: args.baseline,
        seed: args.seed,
        budget_cells: args.budget_cells,
        refine: !args.no_refine,
        bracket_ratio: args.bracket_ratio,
        bootstrap_samples: args.bootstrap,
        indistinguishable_alpha: args.alpha,
        indistinguishable_rtol: args.rtol,
    };

    println!(
        "sweep        {}  {}  d in {:?}  ({} runs/d)",
        args.task.name(),
        args.proj,
        d_values,
        args.runs
    );
    let started = Instant::now();
    let report = run_sweep(task.as_ref(), &cfg)?;

    let m = RunManifest::new(
        "sweep",
        json!({
            "task": args.task.name(),
            "proj": args.proj.to_string(),
            "d_values": d_values,
            "runs": args.runs,
            "threshold_ratio": args.threshold_ratio,
            "baseline": args.baseline.to_string(),
            "budget_cells": args.budget_cells,
            "bootstrap": args.bootstrap,
            "refine": !args.no_refine,
            "bracket_ratio": args.bracket_ratio,
            "alpha": args.alpha,
            "rtol": args.rtol,
            "task_config": task_json,
            "config_digest": report.config_digest,
        }),
        json!({ "seed": args.seed }),
        vec!["report.json".into(), "cells.csv".into(), "medians.csv".into()],
    );
    let dir = args.out.join(format!("sweep-{}", m.run_id()));
    m.write(&dir)?;
    manifest::write_json(&dir, "report.json", &m, &report)?;
    manifest::write_csv(&dir, "cells.csv", &m, &report.cells_csv())?;
    manifest::write_csv(&dir, "medians.csv", &m, &report.medians_csv())?;

    print_sweep_summary(&report);
    println!("wall         {:.1} s", started.elapsed().as_secs_f64());
    println!("report       {}", dir.join("report.json").display());
    Ok(())
}

fn print_sweep_summary(report: &SweepReport) {
    println!(
        "baseline     {}  ({})",
        fmt_perf(report.baseline),
        match report.baseline_mode {
            BaselineMode::Direct => "direct training".to_string(),
            BaselineMode::Global(v) => format!("global reference {v}"),
        }
    );
    println!(
        "threshold    {}  (ratio {})",
        fmt_perf(report.threshold),
        report.threshold_ratio
    );
    println!("{:>8}  {:>12}  {:>12}  {:>12}  {:>12}", "d", "median", "mean", "min", "max");
    for p in &report.points {
        println!(
            "{:>8}  {:>12}  {:>12}  {:>12}  {:>12}",
            p.d,
            fmt_perf(p.median),
            fmt_perf(p.mean()),
            fmt_perf(p.min()),
            fmt_perf(p.max())
        );
    }
    match (&report.d_int90, report.d_int90_std) {
        (Crossing::At(d), Some(std)) => println!(
            "d_int90      {d}  +/- {std:.2}  (bootstrap {}, {} resamples never crossed)",
            report.bootstrap_samples, report.bootstrap_not_crossing
        ),
        (Crossing::At(d), None) => println!("d_int90      {d}  (no bootstrap estimate)"),
        (Crossing::NotReached, _) => {
            println!("d_int90      not reached  (threshold never crossed up to the escalation cap)")
        }
    }
    println!("d_int100     {}  (unstable: varies widely between setups)", report.d_int100);
    println!("cells        {} trained", report.cells_trained);
}

// ---------------------------------------------------------------------------
// compress / eval-checkpoint
// ---------------------------------------------------------------------------

#[derive(Args)]
struct CompressCmd {
    /// Network architecture.
    #[arg(long, default_value = DEFAULT_MNIST_ARCH, value_parser = parse_arch)]
    arch: Architecture,

    /// Projection kind: dense, sparse, or fastfood.
    #[arg(long, default_value = "sparse", value_parser = parse_proj)]
    proj: ProjectionKind,

    /// Subspace dimension to train and store.
    #[arg(long, default_value_t = 750)]
    d: usize,

    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[command(flatten)]
    recipe: RecipeArgs,

    #[command(flatten)]
    data: DataArgs,

    /// Checkpoint file name inside the run directory.
    #[arg(long, default_value = "model.subt")]
    file: String,

    /// Directory run outputs are written under.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

fn cmd_compress(args: CompressCmd) -> CliResult {
    let ds = args.data.load(args.seed)?;
    let recipe = args.recipe.to_config(args.seed);
    println!("task         {}  {}", ds.name, args.arch);
    println!("mode         subspace  d={}  {}", args.d, args.proj);
    println!("recipe       {}", args.recipe.describe());

    let started = Instant::now();
    let (res, sm) = run_classifier(
        &args.arch,
        args.proj,
        &ParamMode::Subspace(args.d),
        args.seed,
        &recipe,
        &ds,
    )?;
    let sm = sm.expect("subspace mode always yields a model");

    let m = RunManifest::new(
        "compress",
        json!({
            "arch": args.arch.to_string(),
            "proj": args.proj.to_string(),
            "d": args.d,
            "recipe": args.recipe.to_json(),
            "data": args.data.to_json(),
        }),
        json!({ "seed": args.seed }),
        vec![args.file.clone(), "history.csv".into()],
    );
    let dir = args.out.join(format!("compress-{}", m.run_id()));
    m.write(&dir)?;
    manifest::write_csv(&dir, "history.csv", &m, &history_csv(&res))?;

    let path = dir.join(&args.file);
    let bytes = codec::save_compressed(&sm, &path)?;
    let direct = codec::direct_size_bytes(sm.arch());

    // Reload and evaluate: the checkpoint stores theta_d rounded to f32,
    // so the number that matters is the reloaded model's accuracy.
    let loaded = codec::load_compressed(&path)?;
    let (acc, loss) = evaluate(loaded.arch(), &loaded.effective_params()?, &ds.val)?;

    println!("trained      val acc {}  (f64 coordinates)", fmt_perf(res.best_val_acc));
    println!("reloaded     val acc {}   val loss {}  (stored f32 coordinates)", fmt_perf(acc), fmt_perf(loss));
    println!(
        "checkpoint   {}  ({} bytes; direct {} bytes; ratio {:.1}x)",
        path.display(),
        bytes,
        direct,
        direct as f64 / bytes as f64
    );
    println!("wall         {:.1} s", started.elapsed().as_secs_f64());
    Ok(())
}

#[derive(Args)]
struct EvalCheckpointCmd {
    /// Compressed checkpoint to load.
    #[arg(long)]
    ckpt: PathBuf,

    /// Split to evaluate: val or train.
    #[arg(long, default_value = "val")]
    split: String,

    /// Seed for reproducing dataset corruptions (must match the run
    /// that produced the checkpoint).
    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[command(flatten)]
    data: DataArgs,
}

fn cmd_eval_checkpoint(args: EvalCheckpointCmd) -> CliResult {
    let sm = codec::load_compressed(&args.ckpt)?;
    let theta_norm = sm.theta_d().iter().map(|x| x * x).sum::<f64>().sqrt();
    println!("checkpoint   {}", args.ckpt.display());
    println!("arch         {}  (D = {})", sm.arch(), sm.d_full());
    println!(
        "subspace     d={}  {}  (theta_d l2 norm {:.4})",
        sm.d_sub(),
        sm.point().projection().kind(),
        theta_norm
    );
    println!(
        "seeds        theta0 {}  projection {}  frozen digest {:016x}",
        sm.seed_theta0(),
        sm.point().projection().seed(),
        sm.frozen_digest()
    );

    let ds = args.data.load(args.seed)?;
    if sm.arch().input_len() != ds.input_dim() {
        return Err(usage(format!(
            "checkpoint expects {}-dimensional inputs, dataset has {}",
            sm.arch().input_len(),
            ds.input_dim()
        )));
    }
    let split = match args.split.as_str() {
        "val" => &ds.val,
        "train" => &ds.train,
        other => return Err(usage(format!("unknown split `{other}` (expected val or train)"))),
    };
    let (acc, loss) = evaluate(sm.arch(), &sm.effective_params()?, split)?;
    println!("{:<12} acc {}   loss {}", args.split, fmt_perf(acc), fmt_perf(loss));
    Ok(())
}

// ---------------------------------------------------------------------------
// es
// ---------------------------------------------------------------------------

#[derive(Args)]
struct EsCmd {
    /// Control environment (only cartpole is built in).
    #[arg(long, default_value = "cartpole")]
    env: String,

    /// Policy network architecture.
    #[arg(long, default_value = DEFAULT_POLICY_ARCH, value_parser = parse_arch)]
    arch: Architecture,

    /// Projection kind: dense, sparse, or fastfood.
    #[arg(long, default_value = "dense", value_parser = parse_proj)]
    proj: ProjectionKind,

    /// Subspace dimension (mutually exclusive with --direct).
    #[arg(long)]
    d: Option<usize>,

    /// Train all policy parameters directly instead of a subspace.
    #[arg(long)]
    direct: bool,

    /// Perturbations per iteration (total over both antithetic
    /// directions; must be even).
    #[arg(long, default_value_t = 64)]
    pop: usize,

    /// Perturbation standard deviation.
    #[arg(long, default_value_t = 0.02)]
    sigma: f64,

    /// ES iterations.
    #[arg(long, default_value_t = 300)]
    iters: usize,

    /// Learning rate of the Adam step applied to the ES gradient.
    #[arg(long, default_value_t = 0.05)]
    lr: f64,

    /// Weight decay applied alongside the ES gradient.
    #[arg(long, default_value_t = 0.0)]
    l2: f64,

    /// Episodes per post-update policy evaluation.
    #[arg(long, default_value_t = 30)]
    eval_episodes: usize,

    /// Master seed: perturbations, episode seeds, initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Directory run outputs are written under.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

fn cmd_es(args: EsCmd) -> CliResult {
    if args.env != "cartpole" {
        return Err(usage(format!("unknown environment `{}` (only cartpole is built in)", args.env)));
    }
    let mode = param_mode(args.d, args.direct)?;
    let reward = CartPoleReward::new(args.arch.clone())?;
    let cfg = ESConfig {
        population: args.pop,
        sigma: args.sigma,
        optimizer: OptimizerConfig::adam(args.lr),
        iterations: args.iters,
        l2_penalty: args.l2,
        eval_episodes: args.eval_episodes,
        seed: args.seed,
    };

    let mode_desc = match &mode {
        ParamMode::Direct => format!("direct  (D = {})", args.arch.param_count()),
        ParamMode::Subspace(d) => format!("subspace  d={d}  {}", args.proj),
    };
    println!("env          {}  policy {}", args.env, args.arch);
    println!("mode         {mode_desc}");
    println!(
        "es           pop {}  sigma {}  adam lr {}  iters {}",
        args.pop, args.sigma, args.lr, args.iters
    );

    let started = Instant::now();
    let result = match &mode {
        ParamMode::Direct => {
            let mut params = nn::init_params(&args.arch, args.seed).values;
            es_train(&reward, EsTarget::Direct(&mut params), &cfg)?
        }
        ParamMode::Subspace(d) => {
            let (seed_theta0, seed_proj) = cell_seeds(args.seed);
            let mut sm =
                SubspaceModel::new(args.arch.clone(), args.proj, *d, seed_theta0, seed_proj)?;
            es_train(&reward, EsTarget::Subspace(&mut sm), &cfg)?
        }
    };

    let m = RunManifest::new(
        "es",
        json!({
            "env": args.env,
            "arch": args.arch.to_string(),
            "proj": args.proj.to_string(),
            "mode": match &mode {
                ParamMode::Direct => json!("direct"),
                ParamMode::Subspace(d) => json!({"d": d}),
            },
            "pop": args.pop,
            "sigma": args.sigma,
            "lr": args.lr,
            "l2": args.l2,
            "iters": args.iters,
            "eval_episodes": args.eval_episodes,
        }),
        json!({ "seed": args.seed }),
        vec!["es.csv".into()],
    );
    let dir = args.out.join(format!("es-{}", m.run_id()));
    m.write(&dir)?;
    let mut csv = String::from("iter,mean_eval_reward,best_so_far\n");
    for s in &result.history {
        writeln!(csv, "{},{},{}", s.iter, s.mean_eval_reward, s.best_so_far).expect("string write");
    }
    manifest::write_csv(&dir, "es.csv", &m, &csv)?;

    println!("iterations   {}", result.iterations_run);
    println!("best         mean eval reward {:.2}", result.best_mean_eval);
    println!("final        mean eval reward {:.2}", result.final_mean_eval);
    println!(
        "status       {}",
        if result.best_mean_eval >= SOLVED_RETURN {
            format!("solved (>= {SOLVED_RETURN})")
        } else {
            format!("not solved (< {SOLVED_RETURN})")
        }
    );
    println!("wall         {:.1} s", started.elapsed().as_secs_f64());
    println!("outputs      {}", dir.join("es.csv").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// bench-proj
// ---------------------------------------------------------------------------

#[derive(Args)]
struct BenchProjCmd {
    /// Comma-separated ambient dimensions D to time.
    #[arg(long, value_delimiter = ',', default_value = "1024,16384,100000")]
    sizes: Vec<usize>,

    /// Subspace dimensions matching --sizes (default: 1% of each D).
    #[arg(long, value_delimiter = ',')]
    d_list: Option<Vec<usize>>,

    /// Timed repetitions per operation (after one warm-up).
    #[arg(long, default_value_t = 5)]
    reps: usize,

    /// Skip materializations whose estimate exceeds this many gigabytes.
    #[arg(long, default_value_t = 4.0)]
    budget_gb: f64,

    /// Projection kinds to time.
    #[arg(long, value_delimiter = ',', default_value = "dense,sparse,fastfood",
          value_parser = parse_proj)]
    kinds: Vec<ProjectionKind>,

    /// Seed of the projections and probe vectors.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Directory run outputs are written under (omit to print only).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Median wall time of `reps` runs after one warm-up call, in ms.
fn time_median_ms(reps: usize, mut f: impl FnMut()) -> f64 {
    f();
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

fn cmd_bench_proj(args: BenchProjCmd) -> CliResult {
    if args.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    if let Some(ds) = &args.d_list {
        if ds.len() != args.sizes.len() {
            return Err(usage(format!(
                "--d-list has {} entries but --sizes has {}",
                ds.len(),
                args.sizes.len()
            )));
        }
    }
    let budget_bytes = (args.budget_gb * 1e9) as u128;

    println!(
        "{:<10} {:>10} {:>8} {:>14} {:>12} {:>12}",
        "kind", "D", "d", "construct_ms", "project_ms", "adjoint_ms"
    );
    let mut csv = String::from("kind,D,d,construct_ms,project_ms,adjoint_ms\n");

    for (i, &d_full) in args.sizes.iter().enumerate() {
        let d_sub = match &args.d_list {
            Some(ds) => ds[i],
            None => (d_full / 100).max(1),
        };
        if d_sub > d_full {
            return Err(usage(format!("d {d_sub} exceeds D {d_full}")));
        }
        let mut probe_stream = Stream::tagged(args.seed, &[0x9e, d_full as u64]);
        let theta_d: Vec<f64> = (0..d_sub).map(|_| probe_stream.normal()).collect();
        let grad: Vec<f64> = (0..d_full).map(|_| probe_stream.normal()).collect();

        for &kind in &args.kinds {
            // A dense matrix is the only kind that materializes all D*d
            // entries; respect the memory budget instead of thrashing.
            if kind == ProjectionKind::Dense {
                let estimate = d_full as u128 * d_sub as u128 * 8;
                if estimate > budget_bytes {
                    println!(
                        "{:<10} {:>10} {:>8} {:>14}",
                        kind.to_string(),
                        d_full,
                        d_sub,
                        format!("skipped ({:.1} GB > budget)", estimate as f64 / 1e9)
                    );
                    continue;
                }
            }
            let t = Instant::now();
            let proj = make_projection(kind, d_full, d_sub, args.seed)?;
            let construct_ms = t.elapsed().as_secs_f64() * 1e3;
            let project_ms = time_median_ms(args.reps, || {
                proj.project(&theta_d).expect("projection applies");
            });
            let adjoint_ms = time_median_ms(args.reps, || {
                proj.project_adjoint(&grad).expect("adjoint applies");
            });
            println!(
                "{:<10} {:>10} {:>8} {:>14.3} {:>12.3} {:>12.3}",
                kind.to_string(),
                d_full,
                d_sub,
                construct_ms,
                project_ms,
                adjoint_ms
            );
            writeln!(
                csv,
                "{kind},{d_full},{d_sub},{construct_ms},{project_ms},{adjoint_ms}"
            )
            .expect("string write");
        }
    }

    if let Some(out) = &args.out {
        let m = RunManifest::new(
            "bench-proj",
            json!({
                "sizes": args.sizes,
                "d_list": args.d_list,
                "reps": args.reps,
                "budget_gb": args.budget_gb,
                "kinds": args.kinds.iter().map(|k| k.to_string()).collect::<Vec<_>>(),
            }),
            json!({ "seed": args.seed }),
            vec!["bench.csv".into()],
        );
        let dir = out.join(format!("bench-proj-{}", m.run_id()));
        m.write(&dir)?;
        manifest::write_csv(&dir, "bench.csv", &m, &csv)?;
        println!("outputs      {}", dir.join("bench.csv").display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

fn run(cmd: Cmd) -> CliResult {
    match cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Compress(a) => cmd_compress(a),
        Cmd::EvalCheckpoint(a) => cmd_eval_checkpoint(a),
        Cmd::Es(a) => cmd_es(a),
        Cmd::BenchProj(a) => cmd_bench_proj(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: configuring the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn task_parser_accepts_the_four_tasks_and_rejects_the_rest() {
        assert!(matches!(parse_task("toy"), Ok(TaskSpec::Toy)));
        assert!(matches!(parse_task("mnist"), Ok(TaskSpec::Mnist)));
        assert!(matches!(parse_task("cartpole"), Ok(TaskSpec::CartPole)));
        assert!(matches!(parse_task("linear:7"), Ok(TaskSpec::Linear(7))));
        assert!(parse_task("linear:0").is_err());
        assert!(parse_task("linear:x").is_err());
        assert!(parse_task("imagenet").is_err());
    }

    #[test]
    fn perf_formatter_switches_to_scientific_outside_the_readable_range() {
        assert_eq!(fmt_perf(0.0), "0");
        assert_eq!(fmt_perf(0.9325), "0.9325");
        assert_eq!(fmt_perf(2.5e-7), "2.500e-7");
        assert_eq!(fmt_perf(3.0e9), "3.000e9");
    }

    #[test]
    fn default_grids_bracket_each_task_crossing() {
        assert_eq!(default_grid(&TaskSpec::Toy, 1000), (1..=12).collect::<Vec<_>>());
        assert_eq!(default_grid(&TaskSpec::Linear(25), 200), vec![12, 25, 50]);
        // The doubled top point is clamped to the ambient dimension.
        assert_eq!(default_grid(&TaskSpec::Linear(150), 200), vec![75, 150, 200]);
        assert_eq!(default_grid(&TaskSpec::Mnist, 199_210), vec![100, 200, 400, 750, 1500]);
        assert_eq!(default_grid(&TaskSpec::CartPole, 114), vec![2, 8, 32]);
    }

    #[test]
    fn exactly_one_parameterization_must_be_chosen() {
        assert!(param_mode(Some(10), false).is_ok());
        assert!(param_mode(None, true).is_ok());
        assert!(param_mode(Some(10), true).is_err());
        assert!(param_mode(None, false).is_err());
    }
}
