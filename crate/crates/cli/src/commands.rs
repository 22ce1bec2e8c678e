use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use simsync::acceptance::run_criteria;
use simsync::eval::{align_gauge, compute_metrics, GaugeMode, MetricsReport, MetricsRow, CSV_HEADER};
use simsync::graph::{parse_graph, write_graph_with_meta, ReadOptions};
use simsync::ipm::IpmSettings;
use simsync::registration::DEFAULT_CONFIDENCE;
use simsync::sdp::{SyncSolution, DEFAULT_ETA_TOL};
use simsync::simulate::{simulate_with, Dataset, GroundTruth, SimConfig};
use simsync::{exec, Error, Execution, Result, SimilarityTransform, ViewGraph};

use crate::pipeline::{self, inlier_scores, Mode, PipelineParams};

const VERSION: &str = env!("CARGO_PKG_VERSION");
const CONFIG_PREFIX: &str = "# config: ";

fn meta(command: &str, config: &impl Serialize) -> Result<Value> {
    Ok(json!({
        "version": VERSION,
        "command": command,
        "config": serde_json::to_value(config)?,
    }))
}

/// Reads the `config` recorded by an earlier run of `command`, from a JSON output or a CSV header line.
fn load_config<T: DeserializeOwned>(path: &Path, command: &str) -> Result<T> {
    let text = fs::read_to_string(path)?;
    let meta = match text.strip_prefix(CONFIG_PREFIX) {
        Some(rest) => serde_json::from_str::<Value>(rest.lines().next().unwrap_or_default())?,
        None => serde_json::from_str::<Value>(&text)?["meta"].take(),
    };
    if meta["command"] != command {
        return Err(Error::InvalidInput(format!(
            "{} was not written by `{command}` (found {})",
            path.display(),
            meta["command"]
        )));
    }
    Ok(serde_json::from_value(meta["config"].clone())?)
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidInput(format!("csv: {other:?}")),
    }
}

/// Writes the config comment line, the metrics header and `rows`.
fn write_metrics_csv(path: &Path, meta: &Value, rows: &[MetricsRow]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{CONFIG_PREFIX}{meta}")?;
    writeln!(file, "{CSV_HEADER}")?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SimArgs {
    /// circle, grid or line.
    #[arg(long, default_value = "circle")]
    pub dataset: Dataset,
    #[arg(long, default_value_t = 10)]
    pub n_poses: usize,
    /// Number of world points.
    #[arg(long, default_value_t = 100)]
    pub n_points: usize,
    /// Standard deviation of the measurement noise.
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    /// Horizontal field of view in degrees.
    #[arg(long, default_value_t = 60.0)]
    pub fov: f64,
    #[arg(long, default_value_t = 0.9)]
    pub scale_min: f64,
    #[arg(long, default_value_t = 1.1)]
    pub scale_max: f64,
    #[arg(long, default_value_t = 0.0)]
    pub outlier_rate: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

impl SimArgs {
    pub fn to_config(&self) -> SimConfig {
        SimConfig::new(self.dataset, self.n_poses, self.n_points, self.sigma, self.seed)
            .with_fov(self.fov)
            .with_scales(self.scale_min, self.scale_max)
            .with_outliers(self.outlier_rate)
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Directory receiving graph.json and truth.json.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Re-run with the configuration recorded in an earlier output.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub simulation: SimConfig,
    pub out_dir: PathBuf,
}

pub fn simulate(args: SimulateArgs) -> Result<ExitCode> {
    let cfg: SimulateConfig = match &args.config {
        Some(p) => load_config(p, "simulate")?,
        None => SimulateConfig {
            simulation: args.sim.to_config(),
            out_dir: args.out_dir,
        },
    };
    let inst = simulate_with(&cfg.simulation, Execution::default())?;
    let meta = meta("simulate", &cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let graph_path = cfg.out_dir.join("graph.json");
    let truth_path = cfg.out_dir.join("truth.json");
    write_graph_with_meta(&inst.graph, Some(&meta), &graph_path)?;
    let mut truth = inst.truth.to_json();
    truth["meta"] = meta;
    write_json(&truth_path, &truth)?;
    println!(
        "{} frames, {} edges, {} correspondences -> {}, {}",
        inst.graph.n_frames(),
        inst.graph.edges.len(),
        inst.graph.n_matches(),
        graph_path.display(),
        truth_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    /// Graph JSON. Without it a graph is simulated from the dataset flags.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Ground-truth JSON, for metrics and oracle pruning.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub sim: SimArgs,
    /// plain, regularized, simsync-gnc, edge-prune-gnc or oracle-prune.
    #[arg(long, default_value = "plain")]
    pub mode: Mode,
    /// Scale regularization weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_ETA_TOL)]
    pub eta_tol: f64,
    /// Noise level behind the robust residual bounds. Defaults to the simulation sigma.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE)]
    pub confidence: f64,
    /// anchor, median-scale or sim3.
    #[arg(long, default_value = "anchor")]
    pub gauge: GaugeMode,
    #[arg(long, default_value_t = IpmSettings::default().max_iters)]
    pub max_iters: usize,
    /// Skip local polishing and dual certification of the rounded estimate.
    #[arg(long)]
    pub no_refine: bool,
    #[arg(long, default_value = "solution.json")]
    pub out: PathBuf,
    /// Metrics CSV; needs ground truth.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Re-run with the configuration recorded in an earlier output.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveConfig {
    pub graph: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Set when the graph is simulated in-process.
    pub simulation: Option<SimConfig>,
    pub pipeline: PipelineParams,
    pub gauge: GaugeMode,
    pub out: PathBuf,
    pub metrics: Option<PathBuf>,
}

struct Truth {
    transforms: Vec<SimilarityTransform>,
    inlier_masks: Option<Vec<Vec<bool>>>,
}

impl Truth {
    fn from_json(v: &Value) -> Result<Self> {
        let inlier_masks = match &v["inlier_masks"] {
            Value::Null => None,
            m => Some(serde_json::from_value(m.clone())?),
        };
        Ok(Self {
            transforms: GroundTruth::transforms_from_json(v)?,
            inlier_masks,
        })
    }
}

/// Graph plus whatever is known about where it came from.
struct Input {
    graph: ViewGraph,
    truth: Option<Truth>,
    simulation: Option<SimConfig>,
}

fn load_input(cfg: &SolveConfig) -> Result<Input> {
    let truth = match &cfg.truth {
        Some(p) => Some(Truth::from_json(&serde_json::from_str(&fs::read_to_string(p)?)?)?),
        None => None,
    };
    match (&cfg.graph, &cfg.simulation) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)?;
            let graph = parse_graph(&text, ReadOptions::default())?;
            let recorded: Value = serde_json::from_str(&text)?;
            let simulation = serde_json::from_value(recorded["meta"]["config"]["simulation"].clone()).ok();
            Ok(Input { graph, truth, simulation })
        }
        (None, Some(sim)) => {
            let inst = simulate_with(sim, Execution::default())?;
            let truth = truth.or(Some(Truth {
                transforms: inst.truth.transforms,
                inlier_masks: Some(inst.truth.inlier_masks),
            }));
            Ok(Input {
                graph: inst.graph,
                truth,
                simulation: Some(sim.clone()),
            })
        }
        (None, None) => Err(Error::InvalidInput("solve needs --graph or a simulation".into())),
    }
}

fn evaluate(sol: &SyncSolution, gt: &[SimilarityTransform], gauge: GaugeMode) -> Result<MetricsReport> {
    let (est, gt) = align_gauge(&sol.transforms, gt, gauge)?;
    let mut m = compute_metrics(&est, &gt);
    m.eta = sol.eta;
    Ok(m)
}

/// Mean of `ŝ_i / s_i` over frames 2..N.
fn mean_scale_ratio(est: &[SimilarityTransform], gt: &[SimilarityTransform]) -> f64 {
    if est.len() < 2 {
        return 1.0;
    }
    let sum: f64 = est[1..].iter().zip(&gt[1..]).map(|(e, g)| e.scale / g.scale).sum();
    sum / (est.len() - 1) as f64
}

struct RowInfo<'a> {
    seed: u64,
    dataset: &'a str,
    sigma: f64,
    outlier_rate: f64,
    method: &'a str,
}

fn metrics_row(info: &RowInfo, sol: &SyncSolution, m: &MetricsReport, wall_ms: f64) -> MetricsRow {
    MetricsRow {
        seed: info.seed,
        dataset: info.dataset.to_string(),
        n: sol.transforms.len(),
        sigma: info.sigma,
        lambda: sol.lambda,
        outlier_rate: info.outlier_rate,
        method: info.method.to_string(),
        rot_err_deg: m.rot_err_deg,
        trans_err: m.trans_err,
        scale_err: m.scale_err,
        ate: m.ate,
        rpe_t: m.rpe_t,
        rpe_r: m.rpe_r,
        eta: m.eta,
        certified: sol.certified,
        wall_ms,
    }
}

fn resolve_solve(args: SolveArgs) -> Result<SolveConfig> {
    if let Some(p) = &args.config {
        return load_config(p, "solve");
    }
    let simulation = args.graph.is_none().then(|| args.sim.to_config());
    let noise_sigma = args.noise_sigma.unwrap_or(args.sim.sigma);
    Ok(SolveConfig {
        graph: args.graph,
        truth: args.truth,
        simulation,
        pipeline: PipelineParams {
            mode: args.mode,
            lambda: args.lambda.unwrap_or(0.0),
            eta_tol: args.eta_tol,
            noise_sigma,
            confidence: args.confidence,
            refine: !args.no_refine,
            max_iters: args.max_iters,
        },
        gauge: args.gauge,
        out: args.out,
        metrics: args.metrics,
    })
}

pub fn solve(args: SolveArgs) -> Result<ExitCode> {
    let noise_given = args.noise_sigma.is_some() || args.config.is_some();
    let mut cfg = resolve_solve(args)?;
    if let Some(sim) = &cfg.simulation {
        sim.validate()?;
    }
    cfg.pipeline.validate()?;
    let input = load_input(&cfg)?;
    if !noise_given {
        if let Some(sim) = &input.simulation {
            cfg.pipeline.noise_sigma = sim.sigma;
        }
    }
    let truth_transforms = input.truth.as_ref().map(|t| t.transforms.as_slice());

    let start = Instant::now();
    let out = pipeline::run(&input.graph, truth_transforms, &cfg.pipeline, Execution::default())?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let sol = &out.solution;

    let meta = meta("solve", &cfg)?;
    let mut doc = sol.to_json();
    doc["meta"] = meta.clone();
    if let Some(masks) = &out.masks {
        doc["inlier_masks"] = json!(masks);
        doc["dropped_edges"] = json!(out.dropped_edges);
    }

    println!(
        "f* = {:.9e}  rho = {:.9e}  eta = {:.3e} (bound from {})",
        sol.f_star,
        sol.rho_hat,
        sol.eta,
        serde_json::to_value(sol.bound_source)?.as_str().unwrap_or_default()
    );
    println!(
        "certified: {}  exact: {}  status: {:?}  iterations: {}",
        sol.certified, sol.exact, sol.status, sol.iterations
    );

    let mut rows = Vec::new();
    if let Some(truth) = &input.truth {
        let m = evaluate(sol, &truth.transforms, cfg.gauge)?;
        println!(
            "rotation {:.4e} deg  translation {:.4e}  scale {:.4e}  ate {:.4e}  mean scale ratio {:.6}",
            m.rot_err_deg,
            m.trans_err,
            m.scale_err,
            m.ate,
            mean_scale_ratio(&sol.transforms, &truth.transforms)
        );
        doc["metrics"] = serde_json::to_value(m)?;
        if let (Some(kept), Some(true_masks)) = (&out.masks, &truth.inlier_masks) {
            if let Some((p, r)) = inlier_scores(kept, true_masks) {
                println!("inlier precision {p:.4}  recall {r:.4}");
                doc["inlier_precision"] = json!(p);
                doc["inlier_recall"] = json!(r);
            }
        }
        let sim = input.simulation.as_ref();
        let info = RowInfo {
            seed: sim.map_or(0, |s| s.seed),
            dataset: sim.map_or("external", |s| s.dataset.name()),
            sigma: sim.map_or(cfg.pipeline.noise_sigma, |s| s.sigma),
            outlier_rate: sim.map_or(0.0, |s| s.outlier_rate),
            method: cfg.pipeline.mode.name(),
        };
        rows.push(metrics_row(&info, sol, &m, wall_ms));
    }
    if let Some(path) = &cfg.metrics {
        if rows.is_empty() {
            return Err(Error::InvalidInput("--metrics needs ground truth (--truth or a simulation)".into()));
        }
        write_metrics_csv(path, &meta, &rows)?;
    }
    write_json(&cfg.out, &doc)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "circle")]
    pub dataset: Vec<Dataset>,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub n_poses: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub n_points: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    pub sigma: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub lambda: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub outlier_rate: Vec<f64>,
    /// Trials per grid point.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1)]
    pub first_seed: u64,
    #[arg(long, default_value_t = 60.0)]
    pub fov: f64,
    #[arg(long, default_value_t = 0.9)]
    pub scale_min: f64,
    #[arg(long, default_value_t = 1.1)]
    pub scale_max: f64,
    /// plain (regularized when lambda > 0), simsync-gnc, edge-prune-gnc or oracle-prune.
    #[arg(long, default_value = "plain")]
    pub mode: Mode,
    /// Noise level behind the robust residual bounds. Defaults to each trial's sigma.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE)]
    pub confidence: f64,
    #[arg(long, default_value_t = DEFAULT_ETA_TOL)]
    pub eta_tol: f64,
    #[arg(long, default_value = "anchor")]
    pub gauge: GaugeMode,
    #[arg(long, default_value_t = IpmSettings::default().max_iters)]
    pub max_iters: usize,
    #[arg(long)]
    pub no_refine: bool,
    /// Per-trial metrics CSV.
    #[arg(long, default_value = "sweep.csv")]
    pub out: PathBuf,
    /// Per-grid-point summary CSV. The summary is printed either way.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Re-run with the configuration recorded in an earlier output.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Debug)]
struct Trial {
    sim: SimConfig,
    params: PipelineParams,
}

impl SweepArgs {
    fn trials(&self) -> Result<Vec<Trial>> {
        let mut out = Vec::new();
        for &dataset in &self.dataset {
            for &n in &self.n_poses {
                for &sigma in &self.sigma {
                    for &lambda in &self.lambda {
                        for &rate in &self.outlier_rate {
                            let mode = match self.mode {
                                Mode::Plain | Mode::Regularized if lambda > 0.0 => Mode::Regularized,
                                Mode::Plain | Mode::Regularized => Mode::Plain,
                                m => m,
                            };
                            let params = PipelineParams {
                                mode,
                                lambda,
                                eta_tol: self.eta_tol,
                                noise_sigma: self.noise_sigma.unwrap_or(sigma),
                                confidence: self.confidence,
                                refine: !self.no_refine,
                                max_iters: self.max_iters,
                            };
                            params.validate()?;
                            for seed in self.first_seed..self.first_seed + self.seeds {
                                let sim = SimConfig::new(dataset, n, self.n_points, sigma, seed)
                                    .with_fov(self.fov)
                                    .with_scales(self.scale_min, self.scale_max)
                                    .with_outliers(rate);
                                sim.validate()?;
                                out.push(Trial {
                                    sim,
                                    params: params.clone(),
                                });
                            }
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidInput("the sweep grid is empty".into()));
        }
        Ok(out)
    }
}

/// Runs one trial single-threaded; returns its metrics row and mean scale ratio.
fn run_trial(t: &Trial, gauge: GaugeMode) -> Result<(MetricsRow, f64)> {
    let inst = simulate_with(&t.sim, Execution::Sequential)?;
    let start = Instant::now();
    let out = pipeline::run(&inst.graph, Some(&inst.truth.transforms), &t.params, Execution::Sequential)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let m = evaluate(&out.solution, &inst.truth.transforms, gauge)?;
    let info = RowInfo {
        seed: t.sim.seed,
        dataset: t.sim.dataset.name(),
        sigma: t.sim.sigma,
        outlier_rate: t.sim.outlier_rate,
        method: t.params.mode.name(),
    };
    Ok((
        metrics_row(&info, &out.solution, &m, wall_ms),
        mean_scale_ratio(&out.solution.transforms, &inst.truth.transforms),
    ))
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    dataset: String,
    #[serde(rename = "N")]
    n: usize,
    sigma: f64,
    lambda: f64,
    outlier_rate: f64,
    method: String,
    trials: usize,
    failed: usize,
    rot_err_deg: f64,
    trans_err: f64,
    scale_err: f64,
    ate: f64,
    rpe_t: f64,
    rpe_r: f64,
    /// Mean over trials of the mean `ŝ_i / s_i`.
    mean_scale: f64,
    eta_median: f64,
    certified_rate: f64,
    wall_ms: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn summarize(trials: &[Trial], results: &[Result<(MetricsRow, f64)>]) -> Vec<SummaryRow> {
    // Grid points in first-seen order.
    let mut order: Vec<(String, usize, u64, u64, u64, String)> = Vec::new();
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, t) in trials.iter().enumerate() {
        let key = (
            t.sim.dataset.name().to_string(),
            t.sim.n_poses,
            t.sim.sigma.to_bits(),
            t.params.lambda.to_bits(),
            t.sim.outlier_rate.to_bits(),
            t.params.mode.name().to_string(),
        );
        let g = order.iter().position(|o| *o == key).unwrap_or_else(|| {
            order.push(key);
            order.len() - 1
        });
        groups.entry(g).or_default().push(k);
    }
    groups
        .into_iter()
        .map(|(g, members)| {
            let (dataset, n, sigma, lambda, rate, method) = order[g].clone();
            let ok: Vec<&(MetricsRow, f64)> = members.iter().filter_map(|&k| results[k].as_ref().ok()).collect();
            let mean = |f: &dyn Fn(&(MetricsRow, f64)) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            SummaryRow {
                dataset,
                n,
                sigma: f64::from_bits(sigma),
                lambda: f64::from_bits(lambda),
                outlier_rate: f64::from_bits(rate),
                method,
                trials: members.len(),
                failed: members.len() - ok.len(),
                rot_err_deg: mean(&|r| r.0.rot_err_deg),
                trans_err: mean(&|r| r.0.trans_err),
                scale_err: mean(&|r| r.0.scale_err),
                ate: mean(&|r| r.0.ate),
                rpe_t: mean(&|r| r.0.rpe_t),
                rpe_r: mean(&|r| r.0.rpe_r),
                mean_scale: mean(&|r| r.1),
                eta_median: median(ok.iter().map(|r| r.0.eta).collect()),
                certified_rate: mean(&|r| if r.0.certified { 1.0 } else { 0.0 }),
                wall_ms: mean(&|r| r.0.wall_ms),
            }
        })
        .collect()
}

fn write_summary(w: impl Write, meta: Option<&Value>, rows: &[SummaryRow]) -> Result<()> {
    let mut w = w;
    if let Some(m) = meta {
        writeln!(w, "{CONFIG_PREFIX}{m}")?;
    }
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r).map_err(csv_error)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn sweep(args: SweepArgs) -> Result<ExitCode> {
    let cfg: SweepArgs = match &args.config {
        Some(p) => load_config(p, "sweep")?,
        None => args,
    };
    let trials = cfg.trials()?;
    eprintln!("running {} trials", trials.len());
    let results = exec::map(&trials, Execution::Parallel, |t| run_trial(t, cfg.gauge));

    let mut rows = Vec::new();
    let mut failures = 0;
    for (t, r) in trials.iter().zip(&results) {
        match r {
            Ok((row, _)) => rows.push(row.clone()),
            Err(e) => {
                failures += 1;
                eprintln!(
                    "trial {} N={} sigma={} lambda={} outliers={} seed={} failed: {e}",
                    t.sim.dataset, t.sim.n_poses, t.sim.sigma, t.params.lambda, t.sim.outlier_rate, t.sim.seed
                );
            }
        }
    }
    let meta = meta("sweep", &cfg)?;
    write_metrics_csv(&cfg.out, &meta, &rows)?;
    let summary = summarize(&trials, &results);
    write_summary(std::io::stdout().lock(), None, &summary)?;
    if let Some(p) = &cfg.summary {
        write_summary(BufWriter::new(File::create(p)?), Some(&meta), &summary)?;
    }
    if failures > 0 {
        eprintln!("{failures} of {} trials failed", trials.len());
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Criterion numbers to run, comma separated. All by default.
    #[arg(long, value_delimiter = ',')]
    pub criteria: Vec<u8>,
}

pub fn verify(args: VerifyArgs) -> Result<ExitCode> {
    let known: Vec<u8> = simsync::acceptance::criteria().iter().map(|c| c.id).collect();
    if let Some(bad) = args.criteria.iter().find(|id| !known.contains(id)) {
        return Err(Error::InvalidInput(format!("no acceptance criterion {bad} (known: {known:?})")));
    }
    let outcomes = run_criteria(&args.criteria, Execution::default(), |o| println!("{o}"));
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!("{passed}/{} criteria passed", outcomes.len());
    Ok(if passed == outcomes.len() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
