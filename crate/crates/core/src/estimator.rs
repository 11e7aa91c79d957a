//! The measurement protocol: sweep the subspace dimension d, find the
//! threshold crossing that defines d_int90, oversample near the threshold,
//! and bootstrap the uncertainty.
//!
//! A sweep trains `runs_per_d` independent models at every tested d and
//! records one performance number per run. The intrinsic dimension at
//! ratio r (0.9 by default) is the smallest tested d whose **median**
//! performance reaches r·baseline — the first-crossing rule, so noise dips
//! above the first crossing are ignored. After the initial grid the sweep
//! inserts geometric midpoints between the largest sub-threshold d and the
//! crossing until consecutive tested values bracket it within a 1.5×
//! ratio; if nothing crosses, it escalates by doubling the largest tested
//! d (capped at D).
//!
//! Everything is deterministic: cell (d, run) draws its seed as a pure
//! hash of (sweep seed, d, run), so neither evaluation order nor
//! parallelism affects results.

use rayon::prelude::*;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::{self, Architecture};
use crate::optimize::{
    minimize_quadratic, train_classifier, train_objective, ObjectiveRunConfig, OptimizerConfig,
    TrainTarget, VectorTarget,
};
use crate::projection::{make_projection, ProjectionKind};
use crate::rng::{stream_key, Stream};
use crate::subspace::{cell_seeds, SubspaceModel, SubspacePoint};
use crate::tag;
use crate::tasks::mnist::Dataset;
use crate::tasks::toy::{toy_performance, ToyProblem, TOY_DIM};
use crate::tasks::{LinearProblem, Objective};

/// Version stamp of the JSON report schema.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// All runs at one subspace dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub d: usize,
    /// One performance per run, in run order.
    pub performances: Vec<f64>,
    pub runs: usize,
    pub median: f64,
}

impl SweepPoint {
    /// Panics on an empty run list: a point without runs has no median.
    pub fn new(d: usize, performances: Vec<f64>) -> SweepPoint {
        assert!(!performances.is_empty(), "a sweep point needs at least one run");
        let median = median_of(&performances);
        SweepPoint { d, runs: performances.len(), median, performances }
    }

    pub fn mean(&self) -> f64 {
        self.performances.iter().sum::<f64>() / self.runs as f64
    }

    /// Sample standard deviation (n−1 denominator); 0 for a single run.
    pub fn std(&self) -> f64 {
        if self.runs < 2 {
            return 0.0;
        }
        let mean = self.mean();
        let ss: f64 = self.performances.iter().map(|p| (p - mean) * (p - mean)).sum();
        (ss / (self.runs - 1) as f64).sqrt()
    }

    pub fn min(&self) -> f64 {
        self.performances.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.performances.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn median_of(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Where the baseline performance comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
pub enum BaselineMode {
    /// Train the direct (full-D) model and use its performance.
    Direct,
    /// A user-supplied constant, e.g. 1.0 for "perfect accuracy".
    Global(f64),
}

impl fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineMode::Direct => f.write_str("direct"),
            BaselineMode::Global(v) => write!(f, "global:{v}"),
        }
    }
}

impl FromStr for BaselineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "direct" {
            return Ok(BaselineMode::Direct);
        }
        if let Some(v) = s.strip_prefix("global:") {
            let v: f64 = v.parse().map_err(|_| {
                Error::InvalidArgument(format!("cannot parse global baseline value `{v}`"))
            })?;
            return Ok(BaselineMode::Global(v));
        }
        Err(Error::InvalidArgument(format!(
            "unknown baseline mode `{s}` (expected `direct` or `global:<value>`)"
        )))
    }
}

/// A crossing dimension, or the honest admission that none was found.
/// Serializes as the number or the string "not reached".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crossing {
    At(usize),
    NotReached,
}

impl Crossing {
    pub fn value(self) -> Option<usize> {
        match self {
            Crossing::At(d) => Some(d),
            Crossing::NotReached => None,
        }
    }
}

impl fmt::Display for Crossing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Crossing::At(d) => write!(f, "{d}"),
            Crossing::NotReached => f.write_str("not reached"),
        }
    }
}

impl Serialize for Crossing {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Crossing::At(d) => serializer.serialize_u64(*d as u64),
            Crossing::NotReached => serializer.serialize_str("not reached"),
        }
    }
}

impl<'de> Deserialize<'de> for Crossing {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Crossing;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a dimension count or the string \"not reached\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Crossing, E> {
                Ok(Crossing::At(v as usize))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Crossing, E> {
                if v < 0 {
                    return Err(E::custom("negative dimension"));
                }
                Ok(Crossing::At(v as usize))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Crossing, E> {
                if v == "not reached" {
                    Ok(Crossing::NotReached)
                } else {
                    Err(E::custom(format!("unexpected crossing string `{v}`")))
                }
            }
        }
        deserializer.deserialize_any(V)
    }
}

/// Sweep schedule and statistics knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Initial grid, strictly ascending.
    pub d_values: Vec<usize>,
    pub runs_per_d: usize,
    /// Crossing threshold as a fraction of baseline.
    pub threshold_ratio: f64,
    pub baseline: BaselineMode,
    pub seed: u64,
    /// Cap on trained sweep cells (initial grid + refinement); the
    /// initial grid must fit, refinement stops when the budget is spent.
    pub budget_cells: Option<usize>,
    /// Insert geometric midpoints near the threshold after the grid.
    pub refine: bool,
    /// Stop refining once the crossing bracket's ratio is at most this.
    pub bracket_ratio: f64,
    pub bootstrap_samples: usize,
    /// Two-sided significance level of the d_int100 test.
    pub indistinguishable_alpha: f64,
    /// Fallback relative tolerance of the d_int100 test, used when run
    /// variance is degenerate (and OR-ed in otherwise, since tiny-variance
    /// samples make t statistics explode).
    pub indistinguishable_rtol: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            d_values: Vec::new(),
            runs_per_d: 3,
            threshold_ratio: 0.9,
            baseline: BaselineMode::Direct,
            seed: 0,
            budget_cells: None,
            refine: true,
            bracket_ratio: 1.5,
            bootstrap_samples: 50,
            indistinguishable_alpha: 0.05,
            indistinguishable_rtol: 1e-3,
        }
    }
}

/// The sweep's full outcome, serializable as versioned JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub task: String,
    pub arch: String,
    pub projection: ProjectionKind,
    pub baseline_mode: BaselineMode,
    pub baseline: f64,
    pub threshold_ratio: f64,
    pub threshold: f64,
    pub runs_per_d: usize,
    pub seed: u64,
    /// Sorted strictly increasing in d.
    pub points: Vec<SweepPoint>,
    pub d_int90: Crossing,
    /// Bootstrap standard deviation of the crossing; absent when no
    /// resample crossed.
    pub d_int90_std: Option<f64>,
    pub bootstrap_samples: usize,
    /// Resamples whose medians never crossed (excluded from the std).
    pub bootstrap_not_crossing: usize,
    /// First d statistically indistinguishable from baseline. This
    /// quantity varies widely between setups, hence the permanent flag.
    pub d_int100: Crossing,
    pub d_int100_unstable: bool,
    pub cells_trained: usize,
    pub config_digest: String,
}

impl SweepReport {
    /// Flat per-run rows: `d,run,performance`.
    pub fn cells_csv(&self) -> String {
        let mut out = String::from("d,run,performance\n");
        for p in &self.points {
            for (run, perf) in p.performances.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", p.d, run, csv_num(*perf)));
            }
        }
        out
    }

    /// Plot-ready rows with spread bars: `d,median,mean,min,max`.
    pub fn medians_csv(&self) -> String {
        let mut out = String::from("d,median,mean,min,max\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.d,
                csv_num(p.median),
                csv_num(p.mean()),
                csv_num(p.min()),
                csv_num(p.max())
            ));
        }
        out
    }
}

/// Shortest-round-trip rendering of a float, switching to scientific
/// notation outside [1e-4, 1e6) where positional notation sprawls.
fn csv_num(x: f64) -> String {
    if x == 0.0 || (x.abs() >= 1e-4 && x.abs() < 1e6) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Smallest tested d whose median performance reaches the threshold.
pub fn find_crossing(points: &[SweepPoint], threshold: f64) -> Option<usize> {
    points.iter().find(|p| p.median >= threshold).map(|p| p.d)
}

/// Resamples each point's runs with replacement `b` times, recomputes the
/// crossing per resample, and returns (population std of the crossing
/// values, count of resamples that never crossed). `None` when no
/// resample crossed at all.
pub fn bootstrap_std(
    points: &[SweepPoint],
    threshold: f64,
    b: usize,
    seed: u64,
) -> (Option<f64>, usize) {
    let mut crossings: Vec<f64> = Vec::with_capacity(b);
    let mut not_crossing = 0usize;
    let mut resampled = Vec::with_capacity(points.len());
    for sample in 0..b {
        resampled.clear();
        for (idx, point) in points.iter().enumerate() {
            let mut s = Stream::tagged(seed, &[tag::BOOTSTRAP, sample as u64, idx as u64]);
            let n = point.runs;
            let draws: Vec<f64> =
                (0..n).map(|_| point.performances[s.below(n as u64) as usize]).collect();
            resampled.push((point.d, median_of(&draws)));
        }
        match resampled.iter().find(|(_, m)| *m >= threshold) {
            Some((d, _)) => crossings.push(*d as f64),
            None => not_crossing += 1,
        }
    }
    if crossings.is_empty() {
        return (None, not_crossing);
    }
    let mean = crossings.iter().sum::<f64>() / crossings.len() as f64;
    let var = crossings.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>()
        / crossings.len() as f64;
    (Some(var.sqrt()), not_crossing)
}

/// Rounded geometric midpoint of a bracket.
fn geometric_midpoint(lo: usize, hi: usize) -> usize {
    ((lo as f64 * hi as f64).sqrt()).round() as usize
}

/// Next d values worth testing: a geometric midpoint while the crossing
/// bracket is wider than `bracket_ratio`, or a doubling of the largest
/// tested d (capped at `d_full`) while nothing has crossed.
pub fn propose_refinements(
    points: &[SweepPoint],
    threshold: f64,
    bracket_ratio: f64,
    d_full: usize,
) -> Vec<usize> {
    let crossing_idx = points.iter().position(|p| p.median >= threshold);
    match crossing_idx {
        Some(0) => Vec::new(), // crossed at the smallest tested d: no bracket below
        Some(i) => {
            let lo = points[i - 1].d;
            let hi = points[i].d;
            if (hi as f64) / (lo as f64) <= bracket_ratio {
                return Vec::new();
            }
            let mid = geometric_midpoint(lo, hi);
            if mid <= lo || mid >= hi {
                Vec::new()
            } else {
                vec![mid]
            }
        }
        None => {
            let max_d = points.last().map_or(0, |p| p.d);
            let next = (max_d.saturating_mul(2)).min(d_full);
            if next > max_d {
                vec![next]
            } else {
                Vec::new()
            }
        }
    }
}

fn indistinguishable(point: &SweepPoint, baseline: f64, alpha: f64, rtol: f64) -> bool {
    let mean = point.mean();
    let rtol_ok = (mean - baseline).abs() <= rtol * baseline.abs().max(f64::MIN_POSITIVE);
    if point.runs >= 2 {
        let s = point.std();
        if s > 0.0 {
            let t = (mean - baseline) / (s / (point.runs as f64).sqrt());
            let dist = StudentsT::new(0.0, 1.0, (point.runs - 1) as f64)
                .expect("valid Student-t parameters");
            let crit = dist.inverse_cdf(1.0 - alpha / 2.0);
            return t.abs() <= crit || rtol_ok;
        }
    }
    rtol_ok
}

/// One task a sweep can measure: anything that can train a model inside a
/// d-dimensional subspace from nothing but (d, cell seed) and report one
/// performance number, plus a direct-training baseline.
pub trait SweepTask: Sync {
    /// Short identifier recorded in reports (e.g. "toy", "mnist").
    fn id(&self) -> String;

    /// Human-readable model descriptor recorded in reports.
    fn arch_descriptor(&self) -> String;

    fn projection_kind(&self) -> ProjectionKind;

    /// Ambient dimension D (caps escalation).
    fn d_full(&self) -> usize;

    /// Trains one model at subspace dimension `d`; the cell seed fully
    /// determines θ0, P, and the optimizer's randomness. Diverged runs
    /// report performance 0 rather than erroring.
    fn run_cell(&self, d: usize, cell_seed: u64) -> Result<f64>;

    /// Direct (full-D) training performance.
    fn baseline_performance(&self, seed: u64) -> Result<f64>;
}

/// Runs the full protocol: baseline, initial grid, refinement, bootstrap.
pub fn run_sweep(task: &dyn SweepTask, cfg: &SweepConfig) -> Result<SweepReport> {
    if cfg.d_values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs a non-empty d grid".into()));
    }
    if !cfg.d_values.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument(format!(
            "d grid must be strictly ascending, got {:?}",
            cfg.d_values
        )));
    }
    if cfg.d_values[0] == 0 {
        return Err(Error::InvalidArgument("subspace dimensions start at 1".into()));
    }
    if let Some(&max_d) = cfg.d_values.last() {
        if max_d > task.d_full() {
            return Err(Error::InvalidArgument(format!(
                "d={} exceeds the task's ambient dimension {}",
                max_d,
                task.d_full()
            )));
        }
    }
    if cfg.runs_per_d == 0 {
        return Err(Error::InvalidArgument("runs_per_d must be at least 1".into()));
    }
    if !(cfg.threshold_ratio > 0.0 && cfg.threshold_ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold_ratio must lie in (0, 1], got {}",
            cfg.threshold_ratio
        )));
    }
    if !(cfg.bracket_ratio > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "bracket_ratio must exceed 1, got {}",
            cfg.bracket_ratio
        )));
    }
    let initial_cells = cfg.d_values.len() * cfg.runs_per_d;
    if let Some(budget) = cfg.budget_cells {
        if budget < initial_cells {
            return Err(Error::BudgetExhausted(format!(
                "budget of {budget} cells cannot cover the initial grid \
                 ({} d values × {} runs = {initial_cells} cells)",
                cfg.d_values.len(),
                cfg.runs_per_d
            )));
        }
    }

    let baseline = match cfg.baseline {
        BaselineMode::Direct => {
            task.baseline_performance(stream_key(cfg.seed, &[tag::BASELINE]))?
        }
        BaselineMode::Global(v) => v,
    };
    if !(baseline > 0.0 && baseline.is_finite()) {
        return Err(Error::Numeric(format!(
            "baseline performance must be positive and finite, got {baseline}"
        )));
    }
    let threshold = cfg.threshold_ratio * baseline;

    let mut tested: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut cells_trained = 0usize;

    let run_batch = |ds: &[usize], tested: &mut BTreeMap<usize, Vec<f64>>| -> Result<()> {
        let cells: Vec<(usize, usize)> = ds
            .iter()
            .flat_map(|&d| (0..cfg.runs_per_d).map(move |run| (d, run)))
            .collect();
        let results: Vec<(usize, usize, f64)> = cells
            .par_iter()
            .map(|&(d, run)| {
                let cell_seed = stream_key(cfg.seed, &[tag::CELL, d as u64, run as u64]);
                task.run_cell(d, cell_seed).map(|perf| (d, run, perf))
            })
            .collect::<Result<_>>()?;
        // Runs arrive unordered under parallelism; index them explicitly.
        for &d in ds {
            tested.insert(d, vec![f64::NAN; cfg.runs_per_d]);
        }
        for (d, run, perf) in results {
            tested.get_mut(&d).expect("batch key")[run] = perf;
        }
        Ok(())
    };

    run_batch(&cfg.d_values, &mut tested)?;
    cells_trained += initial_cells;

    if cfg.refine {
        loop {
            let points: Vec<SweepPoint> =
                tested.iter().map(|(&d, perfs)| SweepPoint::new(d, perfs.clone())).collect();
            let candidates =
                propose_refinements(&points, threshold, cfg.bracket_ratio, task.d_full());
            let candidates: Vec<usize> =
                candidates.into_iter().filter(|d| !tested.contains_key(d)).collect();
            if candidates.is_empty() {
                break;
            }
            let cost = candidates.len() * cfg.runs_per_d;
            if let Some(budget) = cfg.budget_cells {
                if cells_trained + cost > budget {
                    break; // refinement is best-effort once the grid ran
                }
            }
            run_batch(&candidates, &mut tested)?;
            cells_trained += cost;
        }
    }

    let points: Vec<SweepPoint> =
        tested.iter().map(|(&d, perfs)| SweepPoint::new(d, perfs.clone())).collect();
    let d_int90 = match find_crossing(&points, threshold) {
        Some(d) => Crossing::At(d),
        None => Crossing::NotReached,
    };
    let (d_int90_std, bootstrap_not_crossing) = bootstrap_std(
        &points,
        threshold,
        cfg.bootstrap_samples,
        stream_key(cfg.seed, &[tag::BOOTSTRAP]),
    );
    let d_int100 = points
        .iter()
        .find(|p| indistinguishable(p, baseline, cfg.indistinguishable_alpha, cfg.indistinguishable_rtol))
        .map_or(Crossing::NotReached, |p| Crossing::At(p.d));

    let config_digest = {
        let mut h = Sha256::new();
        h.update(
            serde_json::to_vec(&(
                REPORT_SCHEMA_VERSION,
                task.id(),
                task.arch_descriptor(),
                task.projection_kind(),
                cfg,
            ))
            .expect("config serializes"),
        );
        let bytes = h.finalize();
        bytes.iter().map(|b| format!("{b:02x}")).collect::<String>()
    };

    Ok(SweepReport {
        schema_version: REPORT_SCHEMA_VERSION,
        task: task.id(),
        arch: task.arch_descriptor(),
        projection: task.projection_kind(),
        baseline_mode: cfg.baseline,
        baseline,
        threshold_ratio: cfg.threshold_ratio,
        threshold,
        runs_per_d: cfg.runs_per_d,
        seed: cfg.seed,
        points,
        d_int90,
        d_int90_std,
        bootstrap_samples: cfg.bootstrap_samples,
        bootstrap_not_crossing,
        d_int100,
        d_int100_unstable: true,
        cells_trained,
        config_digest,
    })
}

// ---------------------------------------------------------------------------
// Task adapters
// ---------------------------------------------------------------------------

/// Objective sweeps start at the origin: the analytic landscapes carry no
/// preferred random initialization, and a fixed origin keeps the
/// crossing-dimension arguments exact. Each cell's only randomness is its
/// projection (and the optimizer schedule derived from the cell seed).
fn objective_cell_point(
    kind: ProjectionKind,
    d_full: usize,
    d: usize,
    cell_seed: u64,
) -> Result<SubspacePoint> {
    let (_, seed_proj) = cell_seeds(cell_seed);
    let projection = make_projection(kind, d_full, d, seed_proj)?;
    SubspacePoint::new(vec![0.0; d_full], projection)
}

/// Trains a quadratic objective inside a subspace by conjugate gradient
/// (robust to the ill-conditioned restricted Hessians random projections
/// routinely produce, so a plateau always reflects subspace geometry).
fn train_quadratic_cell(
    obj: &dyn Objective,
    point: &mut SubspacePoint,
    iterations: usize,
    stop_below: f64,
) -> Result<f64> {
    let res =
        minimize_quadratic(obj, VectorTarget::Subspace(point), iterations, Some(stop_below))?;
    if res.diverged {
        return Ok(f64::INFINITY); // scored as performance 0 by the callers
    }
    Ok(res.final_loss)
}

/// The 1000-dimensional block-sum toy problem as a sweep task.
#[derive(Debug, Clone)]
pub struct ToySweep {
    pub kind: ProjectionKind,
    pub iterations: usize,
    pub stop_below: f64,
}

impl Default for ToySweep {
    fn default() -> Self {
        ToySweep { kind: ProjectionKind::Dense, iterations: 4000, stop_below: 1e-10 }
    }
}

impl SweepTask for ToySweep {
    fn id(&self) -> String {
        "toy".into()
    }

    fn arch_descriptor(&self) -> String {
        format!("vector:{TOY_DIM}")
    }

    fn projection_kind(&self) -> ProjectionKind {
        self.kind
    }

    fn d_full(&self) -> usize {
        TOY_DIM
    }

    fn run_cell(&self, d: usize, cell_seed: u64) -> Result<f64> {
        let mut point = objective_cell_point(self.kind, TOY_DIM, d, cell_seed)?;
        let loss = train_quadratic_cell(&ToyProblem, &mut point, self.iterations, self.stop_below)?;
        Ok(toy_performance(loss))
    }

    fn baseline_performance(&self, _seed: u64) -> Result<f64> {
        // Direct training: lr 0.004 contracts each residual by 0.8/step.
        let mut theta = vec![0.0; TOY_DIM];
        let cfg = ObjectiveRunConfig {
            optimizer: OptimizerConfig::sgd(0.004),
            iterations: 200,
            stop_below: Some(1e-12),
        };
        let res = train_objective(&ToyProblem, VectorTarget::Direct(&mut theta), &cfg)?;
        Ok(toy_performance(res.final_loss))
    }
}

/// A linear-solution-set problem as a sweep task. Performance is
/// exp(−loss), so a threshold ratio of exp(−ε) against a global baseline
/// of 1.0 makes "crossed" mean exactly "loss ≤ ε".
#[derive(Debug, Clone)]
pub struct LinearSweep {
    pub problem: Arc<LinearProblem>,
    pub kind: ProjectionKind,
    pub iterations: usize,
    pub stop_below: f64,
}

impl LinearSweep {
    pub fn new(problem: LinearProblem) -> Self {
        LinearSweep {
            problem: Arc::new(problem),
            kind: ProjectionKind::Dense,
            iterations: 8000,
            stop_below: 1e-12,
        }
    }

    /// The exact frozen subspace a given cell trains in — lets callers
    /// cross-check trained losses against the least-squares oracle.
    pub fn point_for_cell(&self, d: usize, cell_seed: u64) -> Result<SubspacePoint> {
        objective_cell_point(self.kind, self.problem.dim(), d, cell_seed)
    }
}

impl SweepTask for LinearSweep {
    fn id(&self) -> String {
        format!("linear:c={}", self.problem.codim())
    }

    fn arch_descriptor(&self) -> String {
        format!("vector:{}", self.problem.dim())
    }

    fn projection_kind(&self) -> ProjectionKind {
        self.kind
    }

    fn d_full(&self) -> usize {
        self.problem.dim()
    }

    fn run_cell(&self, d: usize, cell_seed: u64) -> Result<f64> {
        let mut point = self.point_for_cell(d, cell_seed)?;
        let loss =
            train_quadratic_cell(self.problem.as_ref(), &mut point, self.iterations, self.stop_below)?;
        Ok((-loss).exp())
    }

    fn baseline_performance(&self, _seed: u64) -> Result<f64> {
        // The full-space minimum is 0 (codim < D almost surely solvable):
        // verify through the oracle rather than training.
        let theta = self.problem.solution_point()?;
        let loss = self.problem.value(&theta)?;
        Ok((-loss).exp())
    }
}

/// A supervised dataset + architecture + recipe as a sweep task.
#[derive(Clone)]
pub struct ClassifierSweep {
    pub dataset: Arc<Dataset>,
    pub arch: Architecture,
    pub kind: ProjectionKind,
    pub recipe: OptimizerConfig,
}

impl SweepTask for ClassifierSweep {
    fn id(&self) -> String {
        self.dataset.name.clone()
    }

    fn arch_descriptor(&self) -> String {
        self.arch.to_string()
    }

    fn projection_kind(&self) -> ProjectionKind {
        self.kind
    }

    fn d_full(&self) -> usize {
        self.arch.param_count()
    }

    fn run_cell(&self, d: usize, cell_seed: u64) -> Result<f64> {
        let (seed_theta0, seed_proj) = cell_seeds(cell_seed);
        let mut sm = SubspaceModel::new(self.arch.clone(), self.kind, d, seed_theta0, seed_proj)?;
        let cfg = OptimizerConfig { seed: cell_seed, ..self.recipe };
        let res = train_classifier(TrainTarget::Subspace(&mut sm), &self.dataset, &cfg)?;
        Ok(res.performance(self.dataset.measure))
    }

    fn baseline_performance(&self, seed: u64) -> Result<f64> {
        let mut params = nn::init_params(&self.arch, stream_key(seed, &[tag::THETA0]));
        let cfg = OptimizerConfig { seed, ..self.recipe };
        let res = train_classifier(
            TrainTarget::Direct { arch: &self.arch, params: &mut params },
            &self.dataset,
            &cfg,
        )?;
        Ok(res.performance(self.dataset.measure))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(d: usize, perfs: &[f64]) -> SweepPoint {
        SweepPoint::new(d, perfs.to_vec())
    }

    #[test]
    fn crossing_picks_the_smallest_passing_d() {
        let points = [pt(5, &[0.50]), pt(10, &[0.95])];
        assert_eq!(find_crossing(&points, 0.90), Some(10));

        let below = [pt(5, &[0.1]), pt(10, &[0.2])];
        assert_eq!(find_crossing(&below, 0.90), None);

        // First-crossing rule under non-monotone medians.
        let wobble = [pt(5, &[0.91]), pt(10, &[0.85]), pt(20, &[0.95])];
        assert_eq!(find_crossing(&wobble, 0.90), Some(5));
    }

    #[test]
    fn crossing_is_monotone_in_threshold() {
        let points = [
            pt(2, &[0.3, 0.4, 0.2]),
            pt(4, &[0.6, 0.62, 0.55]),
            pt(8, &[0.8, 0.85, 0.79]),
            pt(16, &[0.97, 0.96, 0.99]),
        ];
        let mut last = Some(0);
        for threshold in [0.1, 0.3, 0.5, 0.6, 0.8, 0.9, 0.99] {
            let c = find_crossing(&points, threshold);
            match (last, c) {
                (Some(a), Some(b)) => assert!(b >= a, "threshold {threshold}: {b} < {a}"),
                (None, Some(_)) => panic!("crossing reappeared as threshold rose"),
                _ => {}
            }
            last = c;
        }
    }

    #[test]
    fn median_handles_even_and_odd_counts() {
        assert_eq!(median_of(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median_of(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median_of(&[7.0]), 7.0);
    }

    #[test]
    fn degenerate_runs_have_zero_bootstrap_std() {
        let points = [pt(5, &[0.5, 0.5, 0.5]), pt(10, &[0.95, 0.95, 0.95])];
        let (std, excluded) = bootstrap_std(&points, 0.9, 50, 1);
        assert_eq!(std, Some(0.0));
        assert_eq!(excluded, 0);
    }

    #[test]
    fn bootstrap_matches_exhaustive_enumeration_for_two_runs() {
        // With runs_per_d = 2 a resample of a point is one of 4 equally
        // likely ordered pairs, so the full distribution over (point
        // medians, crossing) is enumerable exactly.
        let points = [pt(5, &[0.85, 0.95]), pt(10, &[0.88, 0.92])];
        let threshold = 0.9;

        let medians = |p: &SweepPoint| {
            let (a, b) = (p.performances[0], p.performances[1]);
            // (a,a), (a,b), (b,a), (b,b) → medians a, (a+b)/2 ×2, b.
            [a, 0.5 * (a + b), 0.5 * (a + b), b]
        };
        let m5 = medians(&points[0]);
        let m10 = medians(&points[1]);
        let mut crossing_values = Vec::new();
        let mut excluded = 0usize;
        for &x in &m5 {
            for &y in &m10 {
                if x >= threshold {
                    crossing_values.push(5.0);
                } else if y >= threshold {
                    crossing_values.push(10.0);
                } else {
                    excluded += 1;
                }
            }
        }
        let mean = crossing_values.iter().sum::<f64>() / crossing_values.len() as f64;
        let exact_std = (crossing_values.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>()
            / crossing_values.len() as f64)
            .sqrt();
        let exact_excluded_rate = excluded as f64 / 16.0;

        let b = 40_000;
        let (std, not_crossing) = bootstrap_std(&points, threshold, b, 7);
        let std = std.unwrap();
        assert!(
            (std - exact_std).abs() <= 0.05 * exact_std,
            "bootstrap {std} vs exact {exact_std}"
        );
        let rate = not_crossing as f64 / b as f64;
        assert!(
            (rate - exact_excluded_rate).abs() < 0.01,
            "excluded rate {rate} vs exact {exact_excluded_rate}"
        );
    }

    #[test]
    fn refinement_proposes_geometric_midpoints() {
        let points = [pt(500, &[0.5]), pt(2000, &[0.95])];
        assert_eq!(propose_refinements(&points, 0.9, 1.5, 10_000), vec![1000]);

        let narrow = [pt(600, &[0.5]), pt(800, &[0.95])];
        assert!(propose_refinements(&narrow, 0.9, 1.5, 10_000).is_empty());

        let no_cross = [pt(32, &[0.5]), pt(64, &[0.6])];
        assert_eq!(propose_refinements(&no_cross, 0.9, 1.5, 10_000), vec![128]);

        // Escalation caps at D and then gives up.
        let capped = [pt(10_000, &[0.6])];
        assert!(propose_refinements(&capped, 0.9, 1.5, 10_000).is_empty());

        // Crossing at the smallest tested d has no bracket to narrow.
        let first = [pt(1, &[0.95]), pt(2, &[0.99])];
        assert!(propose_refinements(&first, 0.9, 1.5, 10_000).is_empty());
    }

    /// Synthetic task: performance steps from `low` to `high` at `d_star`,
    /// with per-cell jitter drawn from the cell seed.
    struct StepTask {
        d_star: usize,
        low: f64,
        high: f64,
        jitter: f64,
    }

    impl SweepTask for StepTask {
        fn id(&self) -> String {
            "step".into()
        }

        fn arch_descriptor(&self) -> String {
            "synthetic".into()
        }

        fn projection_kind(&self) -> ProjectionKind {
            ProjectionKind::Dense
        }

        fn d_full(&self) -> usize {
            4096
        }

        fn run_cell(&self, d: usize, cell_seed: u64) -> Result<f64> {
            let base = if d >= self.d_star { self.high } else { self.low };
            let noise = self.jitter * (Stream::new(cell_seed).uniform() - 0.5);
            Ok(base + noise)
        }

        fn baseline_performance(&self, _seed: u64) -> Result<f64> {
            Ok(1.0)
        }
    }

    fn quick_cfg(d_values: Vec<usize>) -> SweepConfig {
        SweepConfig {
            d_values,
            runs_per_d: 3,
            baseline: BaselineMode::Global(1.0),
            seed: 42,
            bootstrap_samples: 50,
            ..Default::default()
        }
    }

    #[test]
    fn sweep_refines_down_to_the_exact_step() {
        let task = StepTask { d_star: 16, low: 0.5, high: 0.95, jitter: 0.01 };
        let report = run_sweep(&task, &quick_cfg(vec![4, 64])).unwrap();
        assert_eq!(report.d_int90, Crossing::At(16));
        // The bracket below the crossing is within ratio 1.5.
        let below: Vec<usize> =
            report.points.iter().map(|p| p.d).filter(|&d| d < 16).collect();
        let lo = below.into_iter().max().unwrap();
        assert!(16.0 / lo as f64 <= 1.5, "bracket ({lo}, 16) too wide");
        assert!(report.cells_trained > 6, "refinement actually ran");
        assert_eq!(report.threshold, 0.9);
        assert!(report.d_int100_unstable);
    }

    #[test]
    fn sweep_results_are_independent_of_grid_granularity_and_rerun() {
        let task = StepTask { d_star: 16, low: 0.5, high: 0.95, jitter: 0.01 };
        let coarse = run_sweep(&task, &quick_cfg(vec![4, 64])).unwrap();
        let fine = run_sweep(&task, &quick_cfg(vec![4, 8, 11, 16, 64])).unwrap();
        assert_eq!(coarse.d_int90, fine.d_int90);

        // Bit-identical on rerun (determinism incl. parallel dispatch).
        let again = run_sweep(&task, &quick_cfg(vec![4, 64])).unwrap();
        assert_eq!(serde_json::to_string(&coarse).unwrap(), serde_json::to_string(&again).unwrap());

        // Shared cells get identical performances in both sweeps.
        for (a, b) in coarse.points.iter().zip(fine.points.iter().filter(|p| {
            coarse.points.iter().any(|q| q.d == p.d)
        })) {
            assert_eq!(a.d, b.d);
            assert_eq!(a.performances, b.performances);
        }
    }

    #[test]
    fn sweep_escalates_when_nothing_crosses() {
        // Crossing lives above the initial grid: escalation doubles up to
        // it; threshold 0.9 is hit from d_star = 100 on.
        let task = StepTask { d_star: 100, low: 0.5, high: 0.95, jitter: 0.0 };
        let report = run_sweep(&task, &quick_cfg(vec![4, 8])).unwrap();
        assert_eq!(report.d_int90, Crossing::At(128));
        // 8 → 16 → 32 → 64 → 128 doublings all got tested.
        let ds: Vec<usize> = report.points.iter().map(|p| p.d).collect();
        assert!(ds.contains(&64) && ds.contains(&128), "tested {ds:?}");
    }

    #[test]
    fn sweep_reports_not_reached_when_the_task_never_crosses() {
        let task = StepTask { d_star: usize::MAX, low: 0.5, high: 0.95, jitter: 0.0 };
        let report = run_sweep(&task, &quick_cfg(vec![4, 8])).unwrap();
        assert_eq!(report.d_int90, Crossing::NotReached);
        assert_eq!(report.d_int90_std, None);
        assert_eq!(report.bootstrap_not_crossing, report.bootstrap_samples);
        assert_eq!(report.points.last().unwrap().d, 4096, "escalated to D");
        assert_eq!(report.d_int90.to_string(), "not reached");
    }

    #[test]
    fn budget_must_cover_the_initial_grid() {
        let task = StepTask { d_star: 16, low: 0.5, high: 0.95, jitter: 0.0 };
        let mut cfg = quick_cfg(vec![4, 64]);
        cfg.budget_cells = Some(5); // needs 2×3
        let err = run_sweep(&task, &cfg).unwrap_err();
        assert!(matches!(err, Error::BudgetExhausted(_)), "{err}");

        // An exact-grid budget runs but skips refinement.
        cfg.budget_cells = Some(6);
        let report = run_sweep(&task, &cfg).unwrap();
        assert_eq!(report.cells_trained, 6);
        assert_eq!(report.d_int90, Crossing::At(64), "no refinement under budget");
    }

    #[test]
    fn invalid_grids_are_rejected() {
        let task = StepTask { d_star: 16, low: 0.5, high: 0.95, jitter: 0.0 };
        assert!(run_sweep(&task, &quick_cfg(vec![])).is_err());
        assert!(run_sweep(&task, &quick_cfg(vec![8, 8])).is_err());
        assert!(run_sweep(&task, &quick_cfg(vec![8, 4])).is_err());
        assert!(run_sweep(&task, &quick_cfg(vec![0, 4])).is_err());
        assert!(run_sweep(&task, &quick_cfg(vec![4, 100_000])).is_err());
    }

    #[test]
    fn d_int100_uses_the_statistical_test() {
        // Points whose spread comfortably includes the baseline pass; a
        // tight cluster far from baseline fails even if it crosses 90%.
        let baseline = 1.0;
        let near = pt(32, &[0.999, 1.0, 1.001]);
        assert!(indistinguishable(&near, baseline, 0.05, 1e-3));

        let off = pt(16, &[0.95, 0.951, 0.949]);
        assert!(!indistinguishable(&off, baseline, 0.05, 1e-3));

        // Degenerate variance falls back to the relative tolerance.
        let exact = pt(8, &[1.0, 1.0, 1.0]);
        assert!(indistinguishable(&exact, baseline, 0.05, 1e-3));
        let exact_off = pt(8, &[0.9, 0.9, 0.9]);
        assert!(!indistinguishable(&exact_off, baseline, 0.05, 1e-3));
    }

    #[test]
    fn reports_round_trip_through_json() {
        let task = StepTask { d_star: 16, low: 0.5, high: 0.95, jitter: 0.01 };
        let report = run_sweep(&task, &quick_cfg(vec![4, 64])).unwrap();
        let json = serde_json::to_string_pretty(&report).unwrap();
        let back: SweepReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.d_int90, report.d_int90);
        assert_eq!(back.points.len(), report.points.len());
        assert_eq!(back.config_digest, report.config_digest);

        // "not reached" serializes as the literal string.
        let never = StepTask { d_star: usize::MAX, low: 0.5, high: 0.6, jitter: 0.0 };
        let report = run_sweep(&never, &quick_cfg(vec![4])).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"not reached\""), "{json}");
        let back: SweepReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.d_int90, Crossing::NotReached);
    }

    #[test]
    fn csv_outputs_have_one_row_per_cell_and_per_point() {
        let task = StepTask { d_star: 16, low: 0.5, high: 0.95, jitter: 0.01 };
        let report = run_sweep(&task, &quick_cfg(vec![4, 64])).unwrap();
        let cells = report.cells_csv();
        let lines: Vec<&str> = cells.trim_end().lines().collect();
        assert_eq!(lines[0], "d,run,performance");
        assert_eq!(lines.len() - 1, report.cells_trained);
        let medians = report.medians_csv();
        assert_eq!(medians.trim_end().lines().count() - 1, report.points.len());
    }

    #[test]
    fn baseline_modes_parse_and_print() {
        assert_eq!("direct".parse::<BaselineMode>().unwrap(), BaselineMode::Direct);
        assert_eq!(
            "global:0.97".parse::<BaselineMode>().unwrap(),
            BaselineMode::Global(0.97)
        );
        assert!("global:x".parse::<BaselineMode>().is_err());
        assert!("median".parse::<BaselineMode>().is_err());
        assert_eq!(BaselineMode::Global(1.0).to_string(), "global:1");
    }

    #[test]
    fn toy_sweep_single_cell_behaves() {
        // One d=10 cell must solve, one d=9 cell must not (the classic
        // codimension argument); full-grid behavior is covered by the
        // acceptance suite.
        let task = ToySweep::default();
        let perf10 = task.run_cell(10, 123).unwrap();
        assert!(perf10 > 0.99, "d=10 cell performance {perf10}");
        let perf9 = task.run_cell(9, 123).unwrap();
        assert!(perf9 < 0.9, "d=9 cell performance {perf9}");
        let baseline = task.baseline_performance(0).unwrap();
        assert!(baseline > 0.999, "direct baseline {baseline}");
    }

    #[test]
    fn linear_sweep_cells_match_their_oracle() {
        use crate::tasks::linear::linear_solution_problem;
        let problem = linear_solution_problem(60, 5, 17).unwrap();
        let task = LinearSweep::new(problem.clone());
        for (d, expect_solved) in [(5, true), (4, false)] {
            let cell_seed = stream_key(9, &[tag::CELL, d as u64, 0]);
            let perf = task.run_cell(d, cell_seed).unwrap();
            let loss = -perf.ln();
            let point = task.point_for_cell(d, cell_seed).unwrap();
            let oracle = problem.restricted_minimum(&point).unwrap();
            assert!(
                loss >= oracle - 1e-8,
                "trained loss {loss} beat the restricted minimum {oracle}"
            );
            if expect_solved {
                assert!(loss < 1e-6, "d={d} should solve, loss {loss}");
            } else {
                assert!(loss > 1e-3, "d={d} should plateau, loss {loss}");
                assert!(
                    (loss - oracle).abs() <= 1e-6 * oracle.max(1e-12) + 1e-9,
                    "plateau {loss} differs from oracle {oracle}"
                );
            }
        }
    }
}
