//! Experiment configuration, seeded multi-run execution, aggregation and CSV
//! output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::apo_gen::{apo_gen_run, FunctionClass, GenConfig, GenQuery};
use crate::design::elliptic_potential_audit;
use crate::error::{Error, Result};
use crate::estimation::MleConfig;
use crate::instances::{lower_bound_alpha, lower_bound_bad_context, make_lower_bound_instance, InstanceSpec};
use crate::learners::{
    apo_run, batch_apo_run, uniform_run, ApoConfig, BatchApoConfig, BonusMetric, InnerUpdate, RunOutput,
    UniformConfig,
};
use crate::model::{context_gap, Instance, Triplet};

pub const RAW_HEADER: [&str; 11] = [
    "learner",
    "instance",
    "seed",
    "t",
    "gap",
    "est_error",
    "max_bonus",
    "potential_sum",
    "ctx",
    "act_a",
    "act_b",
];

pub const AGGREGATE_HEADER: [&str; 7] = ["learner", "t", "gap_mean", "gap_q10", "gap_q90", "est_error_mean", "n_seeds"];

pub const RAW_CSV: &str = "raw.csv";
pub const AGGREGATE_CSV: &str = "aggregate.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Apo,
    Uniform,
    BatchApo,
    ApoGen,
    UniformGen,
}

impl LearnerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LearnerKind::Apo => "apo",
            LearnerKind::Uniform => "uniform",
            LearnerKind::BatchApo => "batch_apo",
            LearnerKind::ApoGen => "apo_gen",
            LearnerKind::UniformGen => "uniform_gen",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub name: LearnerKind,
    /// Distinguishes several configurations of the same learner.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub params: serde_json::Value,
}

impl LearnerSpec {
    pub fn new(name: LearnerKind) -> Self {
        Self {
            name,
            label: None,
            params: serde_json::Value::Null,
        }
    }

    pub fn display_name(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.name.as_str().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApoParams {
    #[serde(default)]
    pub metric: Option<BonusMetric>,
    #[serde(default)]
    pub average_shifted: bool,
    #[serde(default)]
    pub audit_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformParams {}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchParams {
    #[serde(rename = "B")]
    pub batch_size: usize,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_n_inner")]
    pub n_inner: usize,
    /// Solve the MLE on the buffer instead of taking gradient steps.
    #[serde(default)]
    pub solve: bool,
    #[serde(default)]
    pub max_candidates: Option<usize>,
}

fn default_n_inner() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenParams {
    /// Spacing of the `{-g, 0, g}^d` BTL grid built over the instance.
    #[serde(default)]
    pub grid: Option<f64>,
    /// A function class in JSON form; takes precedence over `grid`.
    #[serde(default)]
    pub class_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LearnerParams {
    Apo(ApoParams),
    Uniform(UniformParams),
    BatchApo(BatchParams),
    ApoGen(GenParams),
    UniformGen(GenParams),
}

fn parse_at<T: DeserializeOwned>(value: &serde_json::Value, path: &str) -> Result<T> {
    let value = if value.is_null() {
        serde_json::Value::Object(Default::default())
    } else {
        value.clone()
    };
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let full = if inner == "." { path.to_string() } else { format!("{path}.{inner}") };
        Error::config(full, e.into_inner().to_string())
    })
}

impl LearnerSpec {
    pub fn resolve(&self, path: &str) -> Result<LearnerParams> {
        let at = format!("{path}.params");
        let params = match self.name {
            LearnerKind::Apo => LearnerParams::Apo(parse_at(&self.params, &at)?),
            LearnerKind::Uniform => LearnerParams::Uniform(parse_at(&self.params, &at)?),
            LearnerKind::BatchApo => {
                let p: BatchParams = parse_at(&self.params, &at)?;
                if p.batch_size == 0 {
                    return Err(Error::config(format!("{at}.B"), "must be >= 1"));
                }
                match p.eta {
                    None if !p.solve => {
                        return Err(Error::config(format!("{at}.eta"), "missing field `eta` (required unless solve = true)"))
                    }
                    Some(e) if !(e > 0.0) => return Err(Error::config(format!("{at}.eta"), "must be > 0")),
                    _ => {}
                }
                LearnerParams::BatchApo(p)
            }
            LearnerKind::ApoGen | LearnerKind::UniformGen => {
                let p: GenParams = parse_at(&self.params, &at)?;
                if p.grid.is_none() && p.class_path.is_none() {
                    return Err(Error::config(format!("{at}.grid"), "missing field `grid` (or `class_path`)"));
                }
                if let Some(g) = p.grid {
                    if !(g.is_finite() && g > 0.0) {
                        return Err(Error::config(format!("{at}.grid"), "must be finite and > 0"));
                    }
                }
                if self.name == LearnerKind::ApoGen {
                    LearnerParams::ApoGen(p)
                } else {
                    LearnerParams::UniformGen(p)
                }
            }
        };
        Ok(params)
    }
}

fn default_delta() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub learners: Vec<LearnerSpec>,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub lambda_h: Option<f64>,
    #[serde(default)]
    pub lambda_v: Option<f64>,
    /// Trace cadence; by default every round up to 2000 rounds, every 10th beyond.
    #[serde(default)]
    pub record_every: Option<usize>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if inner.is_syntax() || inner.is_eof() {
                Error::Json(inner)
            } else {
                Error::config(path, inner.to_string())
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut s = String::new();
        File::open(path)?.read_to_string(&mut s)?;
        Self::from_json(&s)
    }

    /// Checks every field and returns the resolved learner parameters.
    pub fn validate(&self) -> Result<Vec<(String, LearnerParams)>> {
        self.instance.validate()?;
        if self.learners.is_empty() {
            return Err(Error::config("learners", "at least one learner is required"));
        }
        if self.horizon == 0 {
            return Err(Error::config("T", "must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, s) in self.seeds.iter().enumerate() {
            if !seen.insert(*s) {
                return Err(Error::config(format!("seeds[{i}]"), format!("duplicate seed {s}")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta", "must lie in (0, 1)"));
        }
        for (name, v) in [("lambda_h", self.lambda_h), ("lambda_v", self.lambda_v)] {
            if let Some(l) = v {
                if !(l.is_finite() && l > 0.0) {
                    return Err(Error::config(name, "must be finite and > 0"));
                }
            }
        }
        if self.record_every == Some(0) {
            return Err(Error::config("record_every", "must be >= 1"));
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers", "must be >= 1"));
        }
        let mut labels = std::collections::BTreeSet::new();
        let mut out = Vec::with_capacity(self.learners.len());
        for (i, l) in self.learners.iter().enumerate() {
            let path = format!("learners[{i}]");
            let label = l.display_name();
            if label.is_empty() || label.contains([',', '"', '\n']) {
                return Err(Error::config(format!("{path}.label"), "must be nonempty plain text"));
            }
            if !labels.insert(label.clone()) {
                return Err(Error::config(
                    format!("{path}.label"),
                    format!("duplicate learner `{label}`; set distinct labels"),
                ));
            }
            out.push((label, l.resolve(&path)?));
        }
        Ok(out)
    }
}

/// One trace row as exported to CSV. `selected` is empty for rounds after
/// an APO-Gen run has retired every context.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub gap: f64,
    pub est_error: f64,
    pub max_bonus: f64,
    pub potential_sum: f64,
    pub selected: Option<Triplet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunStream {
    pub learner: String,
    pub instance: String,
    pub seed: u64,
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFailure {
    pub learner: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub learner: String,
    pub t: usize,
    pub gap_mean: f64,
    pub gap_q10: f64,
    pub gap_q90: f64,
    pub est_error_mean: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub runs: Vec<RunStream>,
    pub aggregates: Vec<AggregateRow>,
    pub failures: Vec<RunFailure>,
}

/// RNG for one run: the base stream keyed by `seed_base`, sub-stream `seed`.
/// Adding seeds never changes the draws of existing ones.
pub fn run_rng(seed_base: u64, seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_base);
    rng.set_stream(seed);
    rng
}

fn is_recorded(t: usize, horizon: usize, every: usize) -> bool {
    t == horizon || t.is_multiple_of(every)
}

fn rows_from_output(out: &RunOutput) -> Vec<TraceRow> {
    out.records
        .iter()
        .map(|r| TraceRow {
            t: r.t,
            gap: r.gap,
            est_error: r.est_error,
            max_bonus: r.max_bonus,
            potential_sum: r.potential_sum,
            selected: Some(r.selected),
        })
        .collect()
}

fn load_class(inst: &Instance, p: &GenParams) -> Result<FunctionClass> {
    match (&p.class_path, p.grid) {
        (Some(path), _) => FunctionClass::load(path),
        (None, Some(g)) => FunctionClass::btl_grid(inst, g, inst.theta_star()),
        (None, None) => Err(Error::config("params.grid", "missing")),
    }
}

fn run_one(cfg: &ExperimentConfig, inst: &Instance, params: &LearnerParams, seed: u64) -> Result<Vec<TraceRow>> {
    let mut rng = run_rng(cfg.seed_base, seed);
    let every = cfg
        .record_every
        .unwrap_or_else(|| crate::learners::default_record_every(cfg.horizon));
    match params {
        LearnerParams::Apo(p) => {
            let apo = ApoConfig {
                horizon: cfg.horizon,
                delta: cfg.delta,
                lambda_h: cfg.lambda_h,
                lambda_v: cfg.lambda_v,
                metric: p.metric.unwrap_or(BonusMetric::H),
                average_shifted: p.average_shifted,
                mle: MleConfig::default(),
                record_every: Some(every),
                audit_every: p.audit_every,
            };
            Ok(rows_from_output(&apo_run(inst, &apo, &mut rng)?))
        }
        LearnerParams::Uniform(_) => {
            let u = UniformConfig {
                horizon: cfg.horizon,
                lambda_h: cfg.lambda_h,
                lambda_v: cfg.lambda_v,
                mle: MleConfig::default(),
                record_every: Some(every),
            };
            Ok(rows_from_output(&uniform_run(inst, &u, &mut rng)?))
        }
        LearnerParams::BatchApo(p) => {
            let inner = if p.solve {
                InnerUpdate::Solve(MleConfig::default())
            } else {
                InnerUpdate::GradientSteps {
                    eta: p.eta.unwrap_or(0.0),
                    n_steps: p.n_inner,
                }
            };
            let b = BatchApoConfig {
                horizon: cfg.horizon,
                batch_size: p.batch_size,
                inner,
                lambda_v: cfg.lambda_v,
                lambda_h: cfg.lambda_h,
                max_candidates: p.max_candidates,
                record_every: Some(every),
            };
            Ok(rows_from_output(&batch_apo_run(inst, &b, &mut rng)?))
        }
        LearnerParams::ApoGen(p) | LearnerParams::UniformGen(p) => {
            let class = load_class(inst, p)?;
            let query = if matches!(params, LearnerParams::ApoGen(_)) {
                GenQuery::Active
            } else {
                GenQuery::Uniform
            };
            let g = GenConfig {
                horizon: cfg.horizon,
                delta: cfg.delta,
                query,
            };
            let out = apo_gen_run(&class, &g, &mut rng)?;
            let mut rows = Vec::new();
            let final_gap = crate::apo_gen::gen_suboptimality(&class, &out.policy)?;
            for t in 1..=cfg.horizon {
                if !is_recorded(t, cfg.horizon, every) {
                    continue;
                }
                // rounds past an early stop repeat the settled policy
                let row = match out.records.get(t - 1) {
                    Some(r) => TraceRow {
                        t,
                        gap: r.gap,
                        est_error: f64::NAN,
                        max_bonus: r.max_bonus,
                        potential_sum: f64::NAN,
                        selected: Some(r.selected),
                    },
                    None => TraceRow {
                        t,
                        gap: final_gap,
                        est_error: f64::NAN,
                        max_bonus: 0.0,
                        potential_sum: f64::NAN,
                        selected: None,
                    },
                };
                rows.push(row);
            }
            Ok(rows)
        }
    }
}

/// Runs every `(learner, seed)` pair. Configuration problems are returned as
/// errors; failures of individual runs are collected in the output.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let learners = cfg.validate()?;
    let inst = cfg.instance.build()?;
    let instance_label = cfg.instance.label();
    let jobs: Vec<(usize, u64)> = (0..learners.len())
        .flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();

    let work = || -> Vec<(usize, u64, Result<Vec<TraceRow>>)> {
        jobs.par_iter()
            .map(|&(i, seed)| {
                (i, seed, run_one(cfg, &inst, &learners[i].1, seed))
            })
            .collect()
    };
    let results = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::config("workers", e.to_string()))?
            .install(work),
        None => work(),
    };

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (i, seed, res) in results {
        let learner = learners[i].0.clone();
        match res {
            Ok(rows) => runs.push(RunStream {
                learner,
                instance: instance_label.clone(),
                seed,
                rows,
            }),
            Err(e) => failures.push(RunFailure {
                learner,
                seed,
                error: e.to_string(),
            }),
        }
    }
    runs.sort_by(|a, b| (&a.learner, a.seed).cmp(&(&b.learner, b.seed)));
    failures.sort_by(|a, b| (&a.learner, a.seed).cmp(&(&b.learner, b.seed)));
    let aggregates = aggregate(&runs)?;
    Ok(ExperimentOutput {
        runs,
        aggregates,
        failures,
    })
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per `(learner, t)` means and 10/90 quantiles over seeds. Runs of one
/// learner must share the same `t` grid.
pub fn aggregate(runs: &[RunStream]) -> Result<Vec<AggregateRow>> {
    let mut by_learner: BTreeMap<&str, Vec<&RunStream>> = BTreeMap::new();
    for r in runs {
        by_learner.entry(&r.learner).or_default().push(r);
    }
    let mut out = Vec::new();
    for (learner, mut group) in by_learner {
        group.sort_by_key(|r| r.seed);
        let grid: Vec<usize> = group[0].rows.iter().map(|r| r.t).collect();
        for r in &group[1..] {
            if r.rows.len() != grid.len() || r.rows.iter().zip(&grid).any(|(row, &t)| row.t != t) {
                return Err(Error::GridMismatch(format!(
                    "learner `{learner}`: seed {} and seed {} record different rounds",
                    group[0].seed, r.seed
                )));
            }
        }
        let n = group.len();
        for (k, &t) in grid.iter().enumerate() {
            let mut gaps: Vec<f64> = group.iter().map(|r| r.rows[k].gap).collect();
            let est: f64 = group.iter().map(|r| r.rows[k].est_error).sum::<f64>() / n as f64;
            let mean = gaps.iter().sum::<f64>() / n as f64;
            gaps.sort_by(f64::total_cmp);
            out.push(AggregateRow {
                learner: learner.to_string(),
                t,
                gap_mean: mean,
                gap_q10: quantile(&gaps, 0.1),
                gap_q90: quantile(&gaps, 0.9),
                est_error_mean: est,
                n_seeds: n,
            });
        }
    }
    Ok(out)
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_raw_csv<W: Write>(runs: &[RunStream], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(RAW_HEADER)?;
    for run in runs {
        for r in &run.rows {
            wtr.write_record([
                run.learner.clone(),
                run.instance.clone(),
                run.seed.to_string(),
                r.t.to_string(),
                r.gap.to_string(),
                r.est_error.to_string(),
                r.max_bonus.to_string(),
                r.potential_sum.to_string(),
                opt_usize(r.selected.map(|s| s.context)),
                opt_usize(r.selected.map(|s| s.a)),
                opt_usize(r.selected.map(|s| s.a_prime)),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(AGGREGATE_HEADER)?;
    for r in rows {
        wtr.write_record([
            r.learner.clone(),
            r.t.to_string(),
            r.gap_mean.to_string(),
            r.gap_q10.to_string(),
            r.gap_q90.to_string(),
            r.est_error_mean.to_string(),
            r.n_seeds.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct RawCsvRow {
    learner: String,
    instance: String,
    seed: u64,
    t: usize,
    gap: f64,
    est_error: f64,
    max_bonus: f64,
    potential_sum: f64,
    ctx: Option<usize>,
    act_a: Option<usize>,
    act_b: Option<usize>,
}

/// Reads a raw CSV back into run streams (rows must be grouped by run).
pub fn read_raw_csv<R: Read>(r: R) -> Result<Vec<RunStream>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != RAW_HEADER {
        return Err(Error::config("raw.csv", format!("unexpected header {header:?}")));
    }
    let mut runs: Vec<RunStream> = Vec::new();
    for rec in rdr.deserialize() {
        let row: RawCsvRow = rec?;
        let selected = match (row.ctx, row.act_a, row.act_b) {
            (Some(x), Some(a), Some(b)) => Some(Triplet::new(x, a, b)),
            _ => None,
        };
        let tr = TraceRow {
            t: row.t,
            gap: row.gap,
            est_error: row.est_error,
            max_bonus: row.max_bonus,
            potential_sum: row.potential_sum,
            selected,
        };
        match runs.last_mut() {
            Some(last) if last.learner == row.learner && last.seed == row.seed && last.instance == row.instance => {
                last.rows.push(tr)
            }
            _ => runs.push(RunStream {
                learner: row.learner,
                instance: row.instance,
                seed: row.seed,
                rows: vec![tr],
            }),
        }
    }
    Ok(runs)
}

/// Writes `raw.csv` and `aggregate.csv` into `dir`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_raw_csv(&out.runs, File::create(dir.join(RAW_CSV))?)?;
    write_aggregate_csv(&out.aggregates, File::create(dir.join(AGGREGATE_CSV))?)?;
    Ok(())
}

/// Summary of the uniform-versus-APO contrast on the lower-bound instance.
#[derive(Debug, Clone, Serialize)]
pub struct LowerBoundReport {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seeds: usize,
    pub alpha: f64,
    /// Seeds where the uniform learner's bad-context gap equals `alpha / 2`.
    pub uniform_bad_gap_fraction: f64,
    /// `1 - 2T/N`, the guaranteed probability of that event.
    pub uniform_fraction_bound: f64,
    pub uniform_gaps: Vec<f64>,
    pub apo_zero_gap_fraction: f64,
    pub apo_gaps: Vec<f64>,
    /// First round at which APO queried the bad context, per seed.
    pub apo_first_bad_query: Vec<Option<usize>>,
    pub elapsed_secs: f64,
}

pub struct LowerBoundExperiment {
    pub instance: Instance,
    pub report: LowerBoundReport,
    pub uniform_runs: Vec<RunOutput>,
    pub apo_runs: Vec<RunOutput>,
}

impl LowerBoundExperiment {
    /// Both learners' traces in the raw CSV layout, seeds `0..seeds`.
    pub fn streams(&self) -> Vec<RunStream> {
        let label = InstanceSpec::LowerBound { n: self.report.n }.label();
        let mut out = Vec::new();
        for (name, runs) in [("apo", &self.apo_runs), ("uniform", &self.uniform_runs)] {
            for (seed, run) in runs.iter().enumerate() {
                out.push(RunStream {
                    learner: name.to_string(),
                    instance: label.clone(),
                    seed: seed as u64,
                    rows: rows_from_output(run),
                });
            }
        }
        out
    }
}

/// Runs the uniform learner and APO on the lower-bound instance with `N`
/// contexts and budget `T`, for seeds `0..seeds`.
pub fn reproduce_lower_bound(n: usize, horizon: usize, seeds: usize, seed_base: u64) -> Result<LowerBoundExperiment> {
    if seeds == 0 {
        return Err(Error::config("seeds", "must be >= 1"));
    }
    if horizon == 0 {
        return Err(Error::config("T", "must be >= 1"));
    }
    let start = Instant::now();
    let inst = make_lower_bound_instance(n).map_err(|e| Error::config("N", e.to_string()))?;
    let alpha = lower_bound_alpha(n);
    let bad = lower_bound_bad_context(n);

    let runs: Vec<(RunOutput, RunOutput)> = (0..seeds as u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = run_rng(seed_base, seed);
            let u = uniform_run(
                &inst,
                &UniformConfig {
                    horizon,
                    ..UniformConfig::default()
                },
                &mut rng,
            )?;
            let mut rng = run_rng(seed_base, seed);
            let a = apo_run(
                &inst,
                &ApoConfig {
                    horizon,
                    ..ApoConfig::default()
                },
                &mut rng,
            )?;
            Ok((u, a))
        })
        .collect::<Result<_>>()?;

    let mut uniform_gaps = Vec::with_capacity(seeds);
    let mut apo_gaps = Vec::with_capacity(seeds);
    let mut first_bad = Vec::with_capacity(seeds);
    for (u, a) in &runs {
        uniform_gaps.push(context_gap(&inst, &u.policy, bad)?);
        apo_gaps.push(a.final_gap(&inst)?);
        first_bad.push(a.samples.iter().position(|s| s.triplet.context == bad).map(|i| i + 1));
    }
    let hits = uniform_gaps.iter().filter(|&&g| (g - alpha / 2.0).abs() < 1e-9).count();
    let zeros = apo_gaps.iter().filter(|&&g| g == 0.0).count();
    let (uniform_runs, apo_runs) = runs.into_iter().unzip();
    Ok(LowerBoundExperiment {
        instance: inst,
        report: LowerBoundReport {
            n,
            horizon,
            seeds,
            alpha,
            uniform_bad_gap_fraction: hits as f64 / seeds as f64,
            uniform_fraction_bound: 1.0 - 2.0 * horizon as f64 / n as f64,
            uniform_gaps,
            apo_zero_gap_fraction: zeros as f64 / seeds as f64,
            apo_gaps,
            apo_first_bad_query: first_bad,
            elapsed_secs: start.elapsed().as_secs_f64(),
        },
        uniform_runs,
        apo_runs,
    })
}

/// Elliptic-potential audit of a learner trace, with the feature-difference
/// bound taken from the instance.
pub fn audit_potential(inst: &Instance, run: &RunOutput) -> Result<crate::design::PotentialAudit> {
    elliptic_potential_audit(&run.history(), run.lambda_v, inst.dim(), inst.max_diff_norm())
}
