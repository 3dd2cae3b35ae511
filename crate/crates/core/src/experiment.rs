//! Experiment plumbing: TOML configuration, run directories, method
//! comparisons, alpha ablations and CCDF export.
//!
//! A run directory `<root>/<problem>/<method>/seed_<s>/` holds
//! `config.toml` (a fully resolved snapshot that reproduces the run),
//! `epochs.csv`, `checkpoint.json`, `metrics.json`, `residuals.csv` and
//! `ccdf.csv`.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, MetricsBundle};
use crate::model::{Checkpoint, Model};
use crate::pde::{EvalPoints, ProblemKind, ProblemSpec, ReferenceOracle};
use crate::real::{Precision, Real};
use crate::trainer::{self, EpochRecord, EvalData, Evaluation, Penalty, TrainConfig};

pub const OUTPUT_ROOT_ENV: &str = "RRAPINN_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    RraHinge,
    RraWms,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Baseline, Method::RraHinge, Method::RraWms];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::RraHinge => "rra_hinge",
            Method::RraWms => "rra_wms",
        }
    }

    pub fn penalty(self) -> Penalty {
        match self {
            Method::Baseline => Penalty::None,
            Method::RraHinge => Penalty::Hinge,
            Method::RraWms => Penalty::MeanExcess,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// User-facing experiment description. `train` and `problem_overrides`
/// are partial tables merged over the problem's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub method: Method,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub train: toml::Table,
    #[serde(default)]
    pub problem_overrides: toml::Table,
}

/// A fully specified single run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRun {
    pub method: Method,
    pub seed: u64,
    pub problem: ProblemSpec,
    pub train: TrainConfig,
}

fn merge(base: &mut toml::Value, over: &toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

fn merged<T: Serialize + DeserializeOwned>(base: &T, over: &toml::Table) -> Result<T> {
    let mut value = toml::Value::try_from(base)?;
    merge(&mut value, &toml::Value::Table(over.clone()));
    value
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

fn to_table<T: Serialize>(x: &T) -> Result<toml::Table> {
    match toml::Value::try_from(x)? {
        toml::Value::Table(t) => Ok(t),
        _ => Err(Error::Serde("expected a table".into())),
    }
}

impl ExperimentConfig {
    pub fn new(problem: ProblemKind, method: Method) -> Self {
        Self {
            problem,
            method,
            seeds: default_seeds(),
            output_dir: default_output(),
            train: toml::Table::new(),
            problem_overrides: toml::Table::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        for &seed in &self.seeds {
            self.resolve(seed)?;
        }
        Ok(())
    }

    /// Applies `key.path=value` assignments and revalidates.
    pub fn with_assignments(&self, assignments: &[String]) -> Result<Self> {
        let cfg = apply_assignments(self, assignments)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, seed: u64) -> Result<ResolvedRun> {
        let problem = merged(&ProblemSpec::new(self.problem), &self.problem_overrides)?;
        if problem.kind != self.problem {
            return Err(Error::Config("problem overrides may not change the problem kind".into()));
        }
        problem.validate()?;
        let mut train = merged(&TrainConfig::for_problem(self.problem), &self.train)?;
        train.penalty = self.method.penalty();
        train.seed = seed;
        train.validate()?;
        Ok(ResolvedRun {
            method: self.method,
            seed,
            problem,
            train,
        })
    }

    pub fn run_dir(&self, root: &Path, seed: u64) -> PathBuf {
        run_dir(root, self.problem, self.method, seed)
    }
}

/// Applies `key.path=value` assignments to any TOML-serializable value.
/// Values are parsed as TOML when possible and taken as strings otherwise.
pub fn apply_assignments<T: Serialize + DeserializeOwned>(x: &T, assignments: &[String]) -> Result<T> {
    let mut root = toml::Value::try_from(x)?;
    for a in assignments {
        let (key, raw) = a
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got '{a}'")))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        set_path(&mut root, &path, parse_value(raw.trim()))?;
    }
    root.try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, path: &[&str], value: toml::Value) -> Result<()> {
    let mut cur = root;
    for (i, key) in path.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{}' is not a table", path[..i].join("."))))?;
        if i + 1 == path.len() {
            table.insert(key.to_string(), value);
            return Ok(());
        }
        cur = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(Error::Config("empty key".into()))
}

pub fn run_dir(root: &Path, problem: ProblemKind, method: Method, seed: u64) -> PathBuf {
    root.join(problem.name()).join(method.name()).join(format!("seed_{seed}"))
}

impl ResolvedRun {
    /// Snapshot that resolves back to this run.
    pub fn snapshot(&self, output_dir: &Path) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            problem: self.problem.kind,
            method: self.method,
            seeds: vec![self.seed],
            output_dir: output_dir.to_path_buf(),
            train: to_table(&self.train)?,
            problem_overrides: to_table(&self.problem)?,
        })
    }
}

/// Outcome of one persisted run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub metrics: MetricsBundle,
    pub final_eps: f64,
    pub records: Vec<EpochRecord>,
    pub abs_residual: Vec<f64>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_column(path: &Path, header: &str, values: &[f64]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for v in values {
        writeln!(w, "{v:e}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_column(path: &Path) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Header of a cached reference file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceHeader {
    pub version: u32,
    pub problem: ProblemKind,
    pub eval: EvalPoints,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub solver: String,
}

impl ReferenceHeader {
    pub const VERSION: u32 = 1;

    pub fn for_problem(problem: &ProblemSpec) -> Self {
        Self {
            version: Self::VERSION,
            problem: problem.kind,
            eval: problem.eval,
            lower: problem.lower,
            upper: problem.upper,
            solver: ReferenceOracle::solver_tag(problem.kind),
        }
    }

    fn file_name(&self) -> String {
        let points = match self.eval {
            EvalPoints::Grid { nx, ny } => format!("grid_{nx}x{ny}"),
            EvalPoints::Random { n } => format!("random_{n}"),
        };
        format!("{}_{points}_v{}.json", self.problem, self.version)
    }
}

#[derive(Serialize, Deserialize)]
struct ReferenceFile {
    header: ReferenceHeader,
    dim: usize,
    points: Vec<f64>,
    reference: Vec<f64>,
}

/// Evaluation points and reference values, read from `cache_dir` when a file
/// with a matching header exists and written there otherwise.
pub fn cached_reference(problem: &ProblemSpec, cache_dir: &Path) -> Result<EvalData> {
    let header = ReferenceHeader::for_problem(problem);
    let path = cache_dir.join(header.file_name());
    if let Ok(text) = fs::read_to_string(&path) {
        match serde_json::from_str::<ReferenceFile>(&text) {
            Ok(file) if file.header == header && file.dim > 0 => {
                let rows = file.points.len() / file.dim;
                if rows == file.reference.len() {
                    let points = ndarray::Array2::from_shape_vec((rows, file.dim), file.points)
                        .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
                    return Ok(EvalData {
                        points,
                        reference: file.reference,
                    });
                }
                log::warn!("{} is malformed; recomputing", path.display());
            }
            Ok(_) => log::info!("{} is stale; recomputing", path.display()),
            Err(e) => log::warn!("{}: {e}; recomputing", path.display()),
        }
    }
    let data = EvalData::for_problem(problem)?;
    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    let file = ReferenceFile {
        header,
        dim: data.points.ncols(),
        points: data.points.iter().copied().collect(),
        reference: data.reference.clone(),
    };
    let tmp = path.with_extension("json.tmp");
    write_text(&tmp, &serde_json::to_string(&file)?)?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(data)
}

/// Trains, evaluates and persists one run into `dir`.
pub fn execute(run: &ResolvedRun, dir: &Path, output_dir: &Path) -> Result<RunSummary> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join("config.toml"), &run.snapshot(output_dir)?.to_toml_string()?)?;
    let eval = cached_reference(&run.problem, &output_dir.join("references"))?;
    match run.train.network.precision {
        Precision::Single => execute_typed::<f32>(run, dir, &eval),
        Precision::Double => execute_typed::<f64>(run, dir, &eval),
    }
}

fn execute_typed<T: Real>(run: &ResolvedRun, dir: &Path, eval: &EvalData) -> Result<RunSummary> {
    let log_path = dir.join("epochs.csv");
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    writeln!(log, "{}", EpochRecord::CSV_HEADER).map_err(|e| Error::io(&log_path, e))?;
    let mut write_err = None;
    let result = trainer::train::<T>(&run.problem, &run.train, Some(eval), |rec| {
        if write_err.is_none() {
            if let Err(e) = writeln!(log, "{}", rec.csv_row()) {
                write_err = Some(e);
            }
        }
    });
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    if let Some(e) = write_err {
        return Err(Error::io(&log_path, e));
    }
    let outcome = result?;
    outcome.model.checkpoint().save(&dir.join("checkpoint.json"))?;
    let evaluation = trainer::evaluate(&run.problem, &outcome.model, eval)?;
    let summary = persist_evaluation(run, dir, &evaluation, outcome.records)?;
    log::info!(
        "{} {} seed {}: rel_l2 {:.3e}, q95 residual {:.3e}",
        run.problem.kind,
        run.method,
        run.seed,
        summary.metrics.rel_l2,
        summary.metrics.q95_residual
    );
    Ok(summary)
}

fn persist_evaluation(
    run: &ResolvedRun,
    dir: &Path,
    evaluation: &Evaluation,
    records: Vec<EpochRecord>,
) -> Result<RunSummary> {
    let metrics = evaluation.bundle(run.problem.kind, run.method.name(), run.seed, run.train.epochs)?;
    metrics.save(&dir.join("metrics.json"))?;
    write_column(&dir.join("residuals.csv"), "abs_residual", &evaluation.abs_residual)?;
    write_ccdf(dir, &evaluation.abs_residual, false)?;
    let final_eps = records
        .last()
        .map(|r| r.eps)
        .unwrap_or(run.train.threshold.eps_init);
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        metrics,
        final_eps,
        records,
        abs_residual: evaluation.abs_residual.clone(),
    })
}

/// Runs every seed of an experiment.
pub fn run(cfg: &ExperimentConfig, root: &Path) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    cfg.seeds
        .iter()
        .map(|&seed| execute(&cfg.resolve(seed)?, &cfg.run_dir(root, seed), root))
        .collect()
}

/// Loads a persisted run's metrics, training it first if absent.
fn load_or_run(cfg: &ExperimentConfig, root: &Path, seed: u64) -> Result<MetricsBundle> {
    let dir = cfg.run_dir(root, seed);
    let path = dir.join("metrics.json");
    if path.exists() {
        return MetricsBundle::load(&path);
    }
    Ok(execute(&cfg.resolve(seed)?, &dir, root)?.metrics)
}

/// One row of a comparison table: seed-averaged metrics of a method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub seeds: usize,
    pub rel_l2: f64,
    pub l_inf: f64,
    pub q95_residual: f64,
    pub q95_error: f64,
    /// Columns in which this row is best.
    pub best: Vec<String>,
}

/// Compares methods on one problem, reusing persisted runs. `base` supplies
/// the shared overrides; its method field is ignored.
pub fn compare(
    base: &ExperimentConfig,
    methods: &[Method],
    root: &Path,
) -> Result<Vec<ComparisonRow>> {
    if methods.is_empty() {
        return Err(Error::Config("compare needs at least one method".into()));
    }
    if base.seeds.is_empty() {
        return Err(Error::Config("compare needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for &method in methods {
        let cfg = ExperimentConfig {
            method,
            ..base.clone()
        };
        let bundles = base
            .seeds
            .iter()
            .map(|&s| load_or_run(&cfg, root, s))
            .collect::<Result<Vec<_>>>()?;
        let mean = |f: fn(&MetricsBundle) -> f64| bundles.iter().map(f).sum::<f64>() / bundles.len() as f64;
        rows.push(ComparisonRow {
            method,
            seeds: bundles.len(),
            rel_l2: mean(|b| b.rel_l2),
            l_inf: mean(|b| b.l_inf),
            q95_residual: mean(|b| b.q95_residual),
            q95_error: mean(|b| b.q95_error),
            best: Vec::new(),
        });
    }
    let columns: [(&str, fn(&ComparisonRow) -> f64); 4] = [
        ("rel_l2", |r| r.rel_l2),
        ("l_inf", |r| r.l_inf),
        ("q95_residual", |r| r.q95_residual),
        ("q95_error", |r| r.q95_error),
    ];
    for (name, get) in columns {
        let best = rows.iter().map(get).fold(f64::INFINITY, f64::min);
        for r in rows.iter_mut() {
            if get(r) == best {
                r.best.push(name.to_string());
            }
        }
    }
    let path = root.join(base.problem.name()).join("comparison.csv");
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_text(&path, &comparison_csv(&rows))?;
    Ok(rows)
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from("method,seeds,rel_l2,l_inf,q95_residual,q95_error,best\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:e},{:e},{:e},{:e},{}\n",
            r.method,
            r.seeds,
            r.rel_l2,
            r.l_inf,
            r.q95_residual,
            r.q95_error,
            r.best.join(";")
        ));
    }
    s
}

/// Settings of an alpha sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub problems: Vec<ProblemKind>,
    pub alphas: Vec<f64>,
    pub penalty: Penalty,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Overrides applied on top of the ablation defaults for every problem.
    pub train: toml::Table,
    pub problem_overrides: toml::Table,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            problems: vec![ProblemKind::Heat1d, ProblemKind::Burgers1d, ProblemKind::Poisson2d],
            alphas: vec![0.50, 0.75, 0.85, 0.95, 0.99],
            penalty: Penalty::MeanExcess,
            seeds: vec![0],
            output_dir: default_output(),
            train: toml::Table::new(),
            problem_overrides: toml::Table::new(),
        }
    }
}

impl AblationConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(toml::from_str(&text)?)
    }

    /// Ablation training setup: tail-only objective after a 1000-epoch warmup,
    /// 10,000 epochs, a 4x80 tanh network and Adam at 5e-3.
    pub fn resolve(&self, problem: ProblemKind, alpha: f64, seed: u64) -> Result<ResolvedRun> {
        if self.penalty == Penalty::None {
            return Err(Error::Config("ablation needs the hinge or mean-excess penalty".into()));
        }
        let mut spec = ProblemSpec::new(problem);
        if matches!(problem, ProblemKind::Heat1d | ProblemKind::Poisson2d) {
            spec.eval = EvalPoints::Grid { nx: 250, ny: 250 };
        }
        let spec = merged(&spec, &self.problem_overrides)?;
        spec.validate()?;
        let mut t = TrainConfig::for_problem(problem);
        t.epochs = 10_000;
        t.warmup = 1000;
        t.tail_only = true;
        t.threshold.eps_init = 0.5;
        t.network.depth = 4;
        t.network.width = 80;
        t.network.activation = crate::model::Activation::Tanh;
        t.optimizer.kind = trainer::OptimizerKind::Adam;
        t.optimizer.lr = 5e-3;
        t.optimizer.weight_decay = 0.0;
        let mut t = merged(&t, &self.train)?;
        t.penalty = self.penalty;
        t.alpha = alpha;
        t.seed = seed;
        t.validate()?;
        let method = match self.penalty {
            Penalty::Hinge => Method::RraHinge,
            _ => Method::RraWms,
        };
        Ok(ResolvedRun {
            method,
            seed,
            problem: spec,
            train: t,
        })
    }

    fn run_dir(&self, root: &Path, problem: ProblemKind, alpha: f64, seed: u64) -> PathBuf {
        let pen = match self.penalty {
            Penalty::Hinge => "hinge",
            _ => "mean_excess",
        };
        root.join("ablation")
            .join(pen)
            .join(problem.name())
            .join(format!("alpha_{alpha:.2}"))
            .join(format!("seed_{seed}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// Problem name, or `average` for the cross-problem mean.
    pub scope: String,
    pub alpha: f64,
    pub rel_l2: f64,
    pub mean_abs_residual: f64,
    pub final_eps: f64,
}

/// Runs (or reuses) every `(problem, alpha, seed)` and reports per-problem and
/// averaged metrics per alpha.
pub fn ablate(cfg: &AblationConfig, root: &Path) -> Result<Vec<AblationRow>> {
    if cfg.alphas.is_empty() || cfg.problems.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Config("ablation needs problems, alphas and seeds".into()));
    }
    let mut rows = Vec::new();
    let mut per_alpha: Vec<Vec<AblationRow>> = vec![Vec::new(); cfg.alphas.len()];
    for &problem in &cfg.problems {
        for (ai, &alpha) in cfg.alphas.iter().enumerate() {
            let mut acc = (0.0, 0.0, 0.0);
            for &seed in &cfg.seeds {
                let dir = cfg.run_dir(root, problem, alpha, seed);
                let metrics_path = dir.join("metrics.json");
                let (m, eps) = if metrics_path.exists() {
                    (MetricsBundle::load(&metrics_path)?, read_final_eps(&dir)?)
                } else {
                    let s = execute(&cfg.resolve(problem, alpha, seed)?, &dir, root)?;
                    (s.metrics, s.final_eps)
                };
                acc.0 += m.rel_l2;
                acc.1 += m.mean_abs_residual;
                acc.2 += eps;
            }
            let k = cfg.seeds.len() as f64;
            let row = AblationRow {
                scope: problem.name().to_string(),
                alpha,
                rel_l2: acc.0 / k,
                mean_abs_residual: acc.1 / k,
                final_eps: acc.2 / k,
            };
            per_alpha[ai].push(row.clone());
            rows.push(row);
        }
    }
    for (ai, &alpha) in cfg.alphas.iter().enumerate() {
        let group = &per_alpha[ai];
        let k = group.len() as f64;
        rows.push(AblationRow {
            scope: "average".into(),
            alpha,
            rel_l2: group.iter().map(|r| r.rel_l2).sum::<f64>() / k,
            mean_abs_residual: group.iter().map(|r| r.mean_abs_residual).sum::<f64>() / k,
            final_eps: group.iter().map(|r| r.final_eps).sum::<f64>() / k,
        });
    }
    let pen = match cfg.penalty {
        Penalty::Hinge => "hinge",
        _ => "mean_excess",
    };
    let path = root.join("ablation").join(format!("ablation_{pen}.csv"));
    fs::create_dir_all(path.parent().expect("parent")).map_err(|e| Error::io(&path, e))?;
    let mut text = String::from("scope,alpha,rel_l2,mean_abs_residual,final_eps\n");
    for r in &rows {
        text.push_str(&format!(
            "{},{},{:e},{:e},{:e}\n",
            r.scope, r.alpha, r.rel_l2, r.mean_abs_residual, r.final_eps
        ));
    }
    write_text(&path, &text)?;
    Ok(rows)
}

fn read_final_eps(dir: &Path) -> Result<f64> {
    let path = dir.join("epochs.csv");
    if !path.exists() {
        return Err(Error::MissingArtifact { path });
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let header: Vec<&str> = text.lines().next().unwrap_or_default().split(',').collect();
    let col = header
        .iter()
        .position(|h| *h == "eps")
        .ok_or_else(|| Error::Serde(format!("no eps column in {}", path.display())))?;
    let last = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .last()
        .ok_or_else(|| Error::Serde(format!("empty training log {}", path.display())))?;
    last.split(',')
        .nth(col)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Serde(format!("bad eps entry in {}", path.display())))
}

fn write_ccdf(dir: &Path, abs_residual: &[f64], svg: bool) -> Result<Vec<(f64, f64)>> {
    let thresholds = metrics::log_thresholds(abs_residual, metrics::CCDF_POINTS)?;
    let curve = metrics::survival_curve(abs_residual, &thresholds)?;
    metrics::write_ccdf_csv(&dir.join("ccdf.csv"), &curve)?;
    if svg {
        write_text(&dir.join("ccdf.svg"), &render_svg(&curve))?;
    }
    Ok(curve)
}

/// Exports the survival curve of a run's residuals. Uses `residuals.csv`, or
/// recomputes residuals from the checkpoint and configuration when absent.
pub fn ccdf(run_dir: &Path, svg: bool) -> Result<Vec<(f64, f64)>> {
    let residual_path = run_dir.join("residuals.csv");
    let residuals = if residual_path.exists() {
        read_column(&residual_path)?
    } else {
        let ck_path = run_dir.join("checkpoint.json");
        let cfg_path = run_dir.join("config.toml");
        for p in [&ck_path, &cfg_path] {
            if !p.exists() {
                return Err(Error::MissingArtifact { path: p.clone() });
            }
        }
        let cfg = ExperimentConfig::load(&cfg_path)?;
        let run = cfg.resolve(cfg.seeds[0])?;
        let points = run.problem.eval_points();
        let ck = Checkpoint::load(&ck_path)?;
        let r = match ck.precision {
            Precision::Single => {
                trainer::residual_magnitudes(&run.problem, &Model::<f32>::from_checkpoint(&ck)?, &points)?
            }
            Precision::Double => {
                trainer::residual_magnitudes(&run.problem, &Model::<f64>::from_checkpoint(&ck)?, &points)?
            }
        };
        write_column(&residual_path, "abs_residual", &r)?;
        r
    };
    write_ccdf(run_dir, &residuals, svg)
}

/// Minimal log-log line plot of a survival curve.
fn render_svg(curve: &[(f64, f64)]) -> String {
    let (w, h, pad) = (640.0, 420.0, 50.0);
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .filter(|(x, s)| *x > 0.0 && *s > 0.0)
        .map(|(x, s)| (x.log10(), s.log10()))
        .collect();
    let mut body = String::new();
    if let (Some(xmin), Some(xmax)) = (
        pts.iter().map(|p| p.0).reduce(f64::min),
        pts.iter().map(|p| p.0).reduce(f64::max),
    ) {
        let ymin = pts.iter().map(|p| p.1).fold(0.0, f64::min);
        let sx = |x: f64| pad + (x - xmin) / (xmax - xmin).max(1e-12) * (w - 2.0 * pad);
        let sy = |y: f64| pad + (0.0 - y) / (0.0 - ymin).max(1e-12) * (h - 2.0 * pad);
        let line: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        body = format!(
            "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>\n\
             <text x=\"{:.0}\" y=\"{:.0}\" font-size=\"12\">log10 |r| in [{xmin:.2}, {xmax:.2}]</text>\n\
             <text x=\"10\" y=\"20\" font-size=\"12\">log10 S(x), min {ymin:.2}</text>\n",
            line.join(" "),
            pad,
            h - 15.0
        );
    }
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
         <rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n{body}</svg>\n",
        w - 2.0 * pad,
        h - 2.0 * pad
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_cache_round_trips_and_tracks_header() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ProblemSpec::new(ProblemKind::Poisson2dJump);
        p.eval = EvalPoints::Grid { nx: 7, ny: 5 };
        let fresh = cached_reference(&p, dir.path()).unwrap();
        let file = dir.path().join("poisson2d_jump_grid_7x5_v1.json");
        let text = fs::read_to_string(&file).unwrap();
        assert!(text.contains("fd_grid_401"));
        let cached = cached_reference(&p, dir.path()).unwrap();
        assert_eq!(cached.points, fresh.points);
        assert_eq!(cached.reference, fresh.reference);

        let tampered = text.replacen("fd_grid_401", "fd_grid_3", 1);
        fs::write(&file, tampered).unwrap();
        let again = cached_reference(&p, dir.path()).unwrap();
        assert_eq!(again.reference, fresh.reference);
        assert!(fs::read_to_string(&file).unwrap().contains("fd_grid_401"));

        fs::write(&file, "not json").unwrap();
        assert_eq!(cached_reference(&p, dir.path()).unwrap().reference, fresh.reference);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("rba".parse::<Method>().is_err());
    }

    #[test]
    fn parse_config_with_overrides() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            problem = "poisson2d"
            method = "rra_wms"
            seeds = [1, 2]
            [train]
            epochs = 40
            warmup = 10
            [train.network]
            width = 8
            [problem_overrides.sampler]
            n_int = 128
            "#,
        )
        .unwrap();
        let run = cfg.resolve(2).unwrap();
        assert_eq!(run.train.epochs, 40);
        assert_eq!(run.train.network.width, 8);
        assert_eq!(run.train.network.depth, 6);
        assert_eq!(run.train.penalty, Penalty::MeanExcess);
        assert_eq!(run.train.seed, 2);
        assert_eq!(run.problem.sampler.n_int, 128);
        assert_eq!(run.problem.sampler.n_bnd, 200);
    }

    #[test]
    fn missing_problem_is_an_error() {
        assert!(ExperimentConfig::from_toml_str("method = \"baseline\"").is_err());
        assert!(ExperimentConfig::from_toml_str("problem = \"wave\"\nmethod = \"baseline\"").is_err());
        assert!(ExperimentConfig::from_toml_str("problem = \"heat1d\"\nmethod = \"baseline\"\nseeds = []").is_err());
    }

    #[test]
    fn assignments_override_keys() {
        let cfg = ExperimentConfig::new(ProblemKind::Heat1d, Method::Baseline);
        let cfg = cfg
            .with_assignments(&[
                "train.epochs=12".into(),
                "train.warmup=2".into(),
                "train.network.width=4".into(),
                "method=rra_hinge".into(),
            ])
            .unwrap();
        assert_eq!(cfg.method, Method::RraHinge);
        let run = cfg.resolve(0).unwrap();
        assert_eq!((run.train.epochs, run.train.network.width), (12, 4));
        assert!(cfg.with_assignments(&["train.epochs".into()]).is_err());
        assert!(cfg.with_assignments(&["train.alpha=2.0".into()]).is_err());
    }

    #[test]
    fn snapshot_resolves_to_same_run() {
        let mut cfg = ExperimentConfig::new(ProblemKind::Poisson2dJump, Method::RraHinge);
        cfg.train.insert("epochs".into(), toml::Value::Integer(50));
        cfg.train.insert("warmup".into(), toml::Value::Integer(10));
        let run = cfg.resolve(7).unwrap();
        let snap = run.snapshot(Path::new("somewhere")).unwrap();
        let text = snap.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.resolve(7).unwrap(), run);
    }

    #[test]
    fn ablation_defaults() {
        let a = AblationConfig::default();
        let r = a.resolve(ProblemKind::Burgers1d, 0.85, 3).unwrap();
        assert!(r.train.tail_only);
        assert_eq!((r.train.epochs, r.train.warmup), (10_000, 1000));
        assert_eq!((r.train.network.depth, r.train.network.width), (4, 80));
        assert_eq!(r.train.optimizer.lr, 5e-3);
        assert_eq!(r.train.alpha, 0.85);
        let heat = a.resolve(ProblemKind::Heat1d, 0.5, 0).unwrap();
        assert_eq!(heat.problem.eval, EvalPoints::Grid { nx: 250, ny: 250 });
    }

    #[test]
    fn svg_is_well_formed() {
        let s = render_svg(&[(1e-3, 1.0), (1e-2, 0.3), (1e-1, 0.01), (1.0, 0.0)]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("polyline"));
    }
}
