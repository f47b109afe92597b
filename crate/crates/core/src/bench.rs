//! Experiment driver behind the `mipdqn` command: training sweeps,
//! evaluation against the oracle, the unconstrained baseline, the
//! multi-ESS case and model export.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispatch::{
    build_dispatch_model, evaluation_start, run_day, run_day_policy, save_trajectory, DayTrajectory, DispatchContext,
    DispatchError, DispatchSettings,
};
use crate::env::{EnvState, SystemConfig};
use crate::mip::{export_lp, BackendKind, MipError};
use crate::neural::checkpoint::{self, hash64, CheckpointMeta};
use crate::neural::{DenseNet, NeuralError};
use crate::oracle::{save_schedule, solve_horizon, HorizonProblem, HorizonSchedule, OracleError};
use crate::profiles::{self, synthesize, Dataset, DayProfile, ProfileError, SeasonParams};
use crate::rl::{save_curves, train, AgentBundle, EpisodeStats, FeatureSpec, RlError, TrainConfig};

pub const MIP_DQN: &str = "mip-dqn";
pub const BASELINE: &str = "unconstrained-greedy";
pub const ORACLE: &str = "oracle";

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("{0}")]
    Other(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BenchError {
    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Solver(_) => 3,
            BenchError::Infeasible(_) => 4,
            BenchError::Other(_) | BenchError::Io(_) => 1,
        }
    }
}

impl From<DispatchError> for BenchError {
    fn from(e: DispatchError) -> Self {
        match e {
            DispatchError::Infeasible { .. } => BenchError::Infeasible(e.to_string()),
            DispatchError::Solver { .. } | DispatchError::TimeLimit { .. } => BenchError::Solver(e.to_string()),
            DispatchError::Dimension { .. } => BenchError::Config(e.to_string()),
            DispatchError::Io(io) => BenchError::Io(io),
            _ => BenchError::Other(e.to_string()),
        }
    }
}

impl From<OracleError> for BenchError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Infeasible { .. } => BenchError::Infeasible(e.to_string()),
            OracleError::Solver(_) | OracleError::TimeLimit => BenchError::Solver(e.to_string()),
            OracleError::Problem(_) | OracleError::Env(_) => BenchError::Config(e.to_string()),
            OracleError::Io(io) => BenchError::Io(io),
            _ => BenchError::Other(e.to_string()),
        }
    }
}

impl From<RlError> for BenchError {
    fn from(e: RlError) -> Self {
        match e {
            RlError::Config(_) | RlError::Dimension { .. } => BenchError::Config(e.to_string()),
            RlError::Io(io) => BenchError::Io(io),
            _ => BenchError::Other(e.to_string()),
        }
    }
}

impl From<ProfileError> for BenchError {
    fn from(e: ProfileError) -> Self {
        BenchError::Config(e.to_string())
    }
}

impl From<MipError> for BenchError {
    fn from(e: MipError) -> Self {
        match e {
            MipError::Io(io) => BenchError::Io(io),
            _ => BenchError::Solver(e.to_string()),
        }
    }
}

impl From<NeuralError> for BenchError {
    fn from(e: NeuralError) -> Self {
        BenchError::Config(format!("checkpoint: {e}"))
    }
}

impl From<csv::Error> for BenchError {
    fn from(e: csv::Error) -> Self {
        BenchError::Other(e.to_string())
    }
}

/// One JSON file describing the system, data, training and bench settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// System JSON; the built-in three-DG/one-ESS system when absent.
    pub system_path: Option<PathBuf>,
    /// System for `large-case`; the built-in three-DG/three-ESS system when absent.
    pub large_system_path: Option<PathBuf>,
    /// Day profiles CSV; synthetic data when absent.
    pub dataset_path: Option<PathBuf>,
    pub synth_seed: u64,
    pub synth_days: usize,
    pub season: SeasonParams,
    /// Trained model directory; `<out_dir>/model` when absent.
    pub checkpoint_dir: Option<PathBuf>,
    pub seeds: Vec<u64>,
    /// σ₂ values to train with; empty means `train.reward.sigma2` only.
    pub sigma2_sweep: Vec<f64>,
    pub train: TrainConfig,
    pub dispatch: DispatchSettings,
    /// Segments of the oracle's piecewise-linear DG cost.
    pub oracle_segments: usize,
    /// Test days used by `evaluate` and `large-case` (from the start of the test split).
    pub eval_days: usize,
    /// Test days used by `compare`.
    pub compare_days: usize,
    /// Worker threads for per-day evaluation; 0 picks the core count.
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            system_path: None,
            large_system_path: None,
            dataset_path: None,
            synth_seed: 2024,
            synth_days: 365,
            season: SeasonParams::default(),
            checkpoint_dir: None,
            seeds: vec![0],
            sigma2_sweep: Vec::new(),
            train: TrainConfig::default(),
            dispatch: DispatchSettings::default(),
            oracle_segments: 16,
            eval_days: 30,
            compare_days: 10,
            workers: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl BenchConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))
    }

    /// Checks everything that can be checked before any compute.
    pub fn validate(&self) -> Result<(), BenchError> {
        for p in [&self.system_path, &self.large_system_path, &self.dataset_path].into_iter().flatten() {
            if !p.exists() {
                return Err(BenchError::Config(format!("{} does not exist", p.display())));
            }
        }
        if self.seeds.is_empty() {
            return Err(BenchError::Config("at least one seed is required".into()));
        }
        if self.sigma2_sweep.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(BenchError::Config("sigma2 values must be finite and non-negative".into()));
        }
        if self.oracle_segments == 0 || self.eval_days == 0 || self.compare_days == 0 {
            return Err(BenchError::Config(
                "oracle_segments, eval_days and compare_days must be positive".into(),
            ));
        }
        if self.dataset_path.is_none() && self.synth_days == 0 {
            return Err(BenchError::Config("synth_days must be positive".into()));
        }
        self.train.validate()?;
        BackendKind::resolve(self.dispatch.backend).map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn system(&self) -> Result<SystemConfig, BenchError> {
        read_system(self.system_path.as_deref(), SystemConfig::default())
    }

    pub fn large_system(&self) -> Result<SystemConfig, BenchError> {
        read_system(self.large_system_path.as_deref(), SystemConfig::large_case())
    }

    pub fn dataset(&self) -> Result<Dataset, BenchError> {
        let days = match &self.dataset_path {
            Some(p) => profiles::load_csv(p)?,
            None => synthesize(self.synth_seed, self.synth_days, &self.season),
        };
        Ok(profiles::split_train_test(&days)?)
    }

    pub fn model_dir(&self) -> PathBuf {
        self.checkpoint_dir.clone().unwrap_or_else(|| self.out_dir.join("model"))
    }

    fn sigma2_values(&self) -> Vec<f64> {
        if self.sigma2_sweep.is_empty() {
            vec![self.train.reward.sigma2]
        } else {
            self.sigma2_sweep.clone()
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool, BenchError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| BenchError::Other(e.to_string()))
    }
}

fn read_system(path: Option<&Path>, fallback: SystemConfig) -> Result<SystemConfig, BenchError> {
    let sys = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| BenchError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", p.display())))?
        }
        None => fallback,
    };
    sys.validate().map_err(|e| BenchError::Config(e.to_string()))?;
    Ok(sys)
}

/// Frozen networks and feature scaling produced by training.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifacts {
    pub q_net: DenseNet,
    pub policy_net: DenseNet,
    pub features: FeatureSpec,
    pub meta: CheckpointMeta,
}

impl ModelArtifacts {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), BenchError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        checkpoint::save(dir.join("q_net.ckpt"), &self.q_net, &self.meta)?;
        checkpoint::save(dir.join("policy.ckpt"), &self.policy_net, &self.meta)?;
        let json = serde_json::to_string_pretty(&self.features).map_err(|e| BenchError::Other(e.to_string()))?;
        fs::write(dir.join("features.json"), json + "\n")?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, BenchError> {
        let dir = dir.as_ref();
        if !dir.join("q_net.ckpt").exists() {
            return Err(BenchError::Config(format!("no trained model in {}", dir.display())));
        }
        let q = checkpoint::load(dir.join("q_net.ckpt"))?;
        let p = checkpoint::load(dir.join("policy.ckpt"))?;
        let text = fs::read_to_string(dir.join("features.json"))?;
        let features = serde_json::from_str(&text).map_err(|e| BenchError::Config(format!("features.json: {e}")))?;
        Ok(Self {
            q_net: q.net,
            policy_net: p.net,
            features,
            meta: q.meta,
        })
    }

    pub fn bundle(&self) -> Result<AgentBundle, BenchError> {
        Ok(AgentBundle::from_nets(
            self.q_net.clone(),
            self.q_net.clone(),
            self.policy_net.clone(),
            1e-4,
        )?)
    }
}

pub fn run_name(seed: u64, sigma2: f64) -> String {
    format!("seed{seed}_sigma2_{sigma2}")
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub seed: u64,
    pub sigma2: f64,
    pub model: ModelArtifacts,
    pub curves: Vec<EpisodeStats>,
}

/// Trains one model and returns its artifacts.
pub fn train_model(sys: &SystemConfig, days: &[DayProfile], cfg: &TrainConfig) -> Result<TrainedRun, BenchError> {
    let hash = hash64(&serde_json::to_vec(cfg).map_err(|e| BenchError::Other(e.to_string()))?);
    let label = run_name(cfg.seed, cfg.reward.sigma2);
    let out = train(sys, days, cfg, |s| {
        if s.episode % 50 == 0 {
            log::info!(
                "{label}: episode {} reward {:.3} cost {:.1} unbalance {:.1}",
                s.episode,
                s.reward_mean,
                s.cost_mean,
                s.unbalance_kw
            );
        }
    })?;
    Ok(TrainedRun {
        seed: cfg.seed,
        sigma2: cfg.reward.sigma2,
        model: ModelArtifacts {
            q_net: out.bundle.q_net,
            policy_net: out.bundle.policy_net,
            features: out.features,
            meta: CheckpointMeta {
                epoch: cfg.epochs as u64,
                seed: cfg.seed,
                config_hash: hash,
            },
        },
        curves: out.curves,
    })
}

/// Two-sided 95% Student-t quantiles for 1..=30 degrees of freedom.
const T95: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160, 2.145, 2.131,
    2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
];

/// Mean and 95% confidence half-width of a sample.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = T95.get(n - 2).copied().unwrap_or(1.960);
    (mean, t * (var / n as f64).sqrt())
}

/// Per-episode mean and 95% CI across runs of equal length.
pub fn write_curve_summary<W: Write>(writer: W, runs: &[&[EpisodeStats]]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "episode",
        "reward_mean",
        "reward_ci95",
        "cost_mean",
        "cost_ci95",
        "unbalance_kw_mean",
        "unbalance_kw_ci95",
        "n_seeds",
    ])?;
    let len = runs.iter().map(|r| r.len()).min().unwrap_or(0);
    for e in 0..len {
        let col = |f: fn(&EpisodeStats) -> f64| mean_ci95(&runs.iter().map(|r| f(&r[e])).collect::<Vec<_>>());
        let (rm, rc) = col(|s| s.reward_mean);
        let (cm, cc) = col(|s| s.cost_mean);
        let (um, uc) = col(|s| s.unbalance_kw);
        w.write_record([
            runs[0][e].episode.to_string(),
            rm.to_string(),
            rc.to_string(),
            cm.to_string(),
            cc.to_string(),
            um.to_string(),
            uc.to_string(),
            runs.len().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub runs: Vec<String>,
    pub primary_model: PathBuf,
}

/// Trains one model per (seed, σ₂) pair. The first pair also becomes the
/// model used by `evaluate`.
pub fn cmd_train(cfg: &BenchConfig) -> Result<TrainSummary, BenchError> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let data = cfg.dataset()?;
    let jobs: Vec<TrainConfig> = cfg
        .sigma2_values()
        .into_iter()
        .flat_map(|s2| {
            cfg.seeds.iter().map(move |&seed| {
                let mut t = cfg.train.clone();
                t.seed = seed;
                t.reward.sigma2 = s2;
                t
            })
        })
        .collect();
    let runs: Vec<TrainedRun> = cfg
        .pool()?
        .install(|| jobs.par_iter().map(|t| train_model(&sys, &data.train, t)).collect::<Result<_, _>>())?;
    let runs_dir = cfg.out_dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let mut names = Vec::new();
    for r in &runs {
        let name = run_name(r.seed, r.sigma2);
        r.model.save(runs_dir.join(&name))?;
        save_curves(runs_dir.join(format!("curves_{name}.csv")), &r.curves)?;
        names.push(name);
    }
    for s2 in cfg.sigma2_values() {
        let group: Vec<&[EpisodeStats]> = runs.iter().filter(|r| r.sigma2 == s2).map(|r| r.curves.as_slice()).collect();
        let f = fs::File::create(cfg.out_dir.join(format!("curves_summary_sigma2_{s2}.csv")))?;
        write_curve_summary(f, &group)?;
    }
    let primary = cfg.model_dir();
    runs[0].model.save(&primary)?;
    save_curves(primary.join("curves.csv"), &runs[0].curves)?;
    Ok(TrainSummary {
        runs: names,
        primary_model: primary,
    })
}

/// `(cost − oracle)/oracle` in percent.
pub fn relative_error_pct(cost: f64, oracle: f64) -> f64 {
    100.0 * (cost - oracle) / oracle
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub day: String,
    pub algorithm: String,
    pub cost_usd: f64,
    /// Cumulative power unbalance over the day.
    pub unbalance_kw: f64,
    /// Unbalance priced at the hourly tariff.
    pub unbalance_value_usd: f64,
    /// Gap of `cost + unbalance value` to the oracle; absent without an oracle cost.
    pub error_pct: Option<f64>,
    pub max_residual_kw: f64,
    pub solve_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub days: usize,
    pub mean_cost_usd: f64,
    pub mean_error_pct: Option<f64>,
    pub error_std_pct: Option<f64>,
    pub mean_unbalance_kw: f64,
    pub max_unbalance_kw: f64,
    pub max_residual_kw: f64,
    pub total_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
    pub summary: Vec<AlgorithmSummary>,
}

impl RunReport {
    /// Aggregates are always derived from the rows.
    pub fn from_rows(rows: Vec<ReportRow>) -> Self {
        let mut algos: Vec<String> = Vec::new();
        for r in &rows {
            if !algos.contains(&r.algorithm) {
                algos.push(r.algorithm.clone());
            }
        }
        let summary = algos
            .into_iter()
            .map(|a| {
                let rs: Vec<&ReportRow> = rows.iter().filter(|r| r.algorithm == a).collect();
                let n = rs.len() as f64;
                let errs: Vec<f64> = rs.iter().filter_map(|r| r.error_pct).collect();
                let (mean_err, std_err) = if errs.is_empty() {
                    (None, None)
                } else {
                    let m = errs.iter().sum::<f64>() / errs.len() as f64;
                    let v = errs.iter().map(|e| (e - m).powi(2)).sum::<f64>() / errs.len() as f64;
                    (Some(m), Some(v.sqrt()))
                };
                AlgorithmSummary {
                    days: rs.len(),
                    mean_cost_usd: rs.iter().map(|r| r.cost_usd).sum::<f64>() / n,
                    mean_error_pct: mean_err,
                    error_std_pct: std_err,
                    mean_unbalance_kw: rs.iter().map(|r| r.unbalance_kw).sum::<f64>() / n,
                    max_unbalance_kw: rs.iter().map(|r| r.unbalance_kw).fold(0.0, f64::max),
                    max_residual_kw: rs.iter().map(|r| r.max_residual_kw).fold(0.0, f64::max),
                    total_time_s: rs.iter().map(|r| r.solve_ms).sum::<f64>() / 1e3,
                    algorithm: a,
                }
            })
            .collect();
        Self { rows, summary }
    }

    pub fn algorithm(&self, name: &str) -> Option<&AlgorithmSummary> {
        self.summary.iter().find(|s| s.algorithm == name)
    }

    pub fn rows_for<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.algorithm == name)
    }

    /// Deterministic per-day results; timings go to [`RunReport::write_timing_csv`].
    pub fn write_report_csv<W: Write>(&self, writer: W) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "day",
            "algorithm",
            "cost_usd",
            "unbalance_kw",
            "unbalance_value_usd",
            "error_pct",
            "max_residual_kw",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.day.clone(),
                r.algorithm.clone(),
                r.cost_usd.to_string(),
                r.unbalance_kw.to_string(),
                r.unbalance_value_usd.to_string(),
                r.error_pct.map(|e| e.to_string()).unwrap_or_default(),
                format!("{:e}", r.max_residual_kw),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timing_csv<W: Write>(&self, writer: W) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["day", "algorithm", "solve_ms"])?;
        for r in &self.rows {
            w.write_record([r.day.clone(), r.algorithm.clone(), format!("{:.3}", r.solve_ms)])?;
        }
        for s in &self.summary {
            w.write_record(["all".to_string(), s.algorithm.clone(), format!("{:.3}", s.total_time_s * 1e3)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aggregates without timings, so the file is reproducible.
    pub fn summary_json(&self) -> String {
        let v: Vec<serde_json::Value> = self
            .summary
            .iter()
            .map(|s| {
                serde_json::json!({
                    "algorithm": s.algorithm,
                    "days": s.days,
                    "mean_cost_usd": s.mean_cost_usd,
                    "mean_error_pct": s.mean_error_pct,
                    "error_std_pct": s.error_std_pct,
                    "mean_unbalance_kw": s.mean_unbalance_kw,
                    "max_unbalance_kw": s.max_unbalance_kw,
                    "max_residual_kw": s.max_residual_kw,
                })
            })
            .collect();
        serde_json::to_string_pretty(&v).expect("plain JSON") + "\n"
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), BenchError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.write_report_csv(fs::File::create(dir.join("report.csv"))?)?;
        self.write_timing_csv(fs::File::create(dir.join("timing.csv"))?)?;
        fs::write(dir.join("summary.json"), self.summary_json())?;
        Ok(())
    }
}

/// Everything computed for one evaluation window.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: RunReport,
    pub mip: Vec<DayTrajectory>,
    pub baseline: Vec<DayTrajectory>,
    pub oracle: Vec<Option<HorizonSchedule>>,
}

struct DayResult {
    mip: DayTrajectory,
    baseline: Option<DayTrajectory>,
    oracle: Option<HorizonSchedule>,
}

fn traj_row(t: &DayTrajectory, algorithm: &str, dt: f64, oracle: Option<f64>) -> ReportRow {
    let cost = t.total_cost();
    let value = t.unbalance_value(dt);
    ReportRow {
        day: t.label.clone(),
        algorithm: algorithm.to_string(),
        cost_usd: cost,
        unbalance_kw: t.total_unbalance(),
        unbalance_value_usd: value,
        error_pct: oracle.map(|o| relative_error_pct(cost + value, o)),
        max_residual_kw: t.max_residual(),
        solve_ms: t.total_solve_ms(),
    }
}

/// Runs MIP dispatch, the oracle and optionally the unconstrained baseline
/// on each day. Days are processed in parallel; results keep day order.
pub fn evaluate_days(
    sys: &SystemConfig,
    model: &ModelArtifacts,
    days: &[DayProfile],
    settings: &DispatchSettings,
    reward: &crate::env::RewardParams,
    oracle_segments: usize,
    with_baseline: bool,
    workers: usize,
) -> Result<Evaluation, BenchError> {
    let bundle = model.bundle()?;
    let oracle_kind = BackendKind::resolve(settings.backend)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| BenchError::Other(e.to_string()))?;
    let results: Vec<DayResult> = pool.install(|| {
        days.par_iter()
            .map(|day| -> Result<DayResult, BenchError> {
                let ctx = DispatchContext::new(&model.q_net, &model.features, sys, settings)?;
                let mip = run_day(&ctx, day, reward)?;
                let baseline = if with_baseline {
                    Some(run_day_policy(&bundle, &model.features, sys, day, reward)?)
                } else {
                    None
                };
                let problem = HorizonProblem::new(sys, day, oracle_segments);
                let oracle = match solve_horizon(&problem, oracle_kind.create()?.as_ref(), &settings.options) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        log::warn!("oracle unavailable for {}: {e}; error column omitted", day.label());
                        None
                    }
                };
                Ok(DayResult { mip, baseline, oracle })
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut rows = Vec::new();
    for r in &results {
        let oc = r.oracle.as_ref().map(|o| o.total_cost);
        rows.push(traj_row(&r.mip, MIP_DQN, sys.dt, oc));
        if let Some(b) = &r.baseline {
            rows.push(traj_row(b, BASELINE, sys.dt, oc));
        }
        if let Some(o) = &r.oracle {
            rows.push(ReportRow {
                day: o.label.clone(),
                algorithm: ORACLE.to_string(),
                cost_usd: o.total_cost,
                unbalance_kw: 0.0,
                unbalance_value_usd: 0.0,
                error_pct: Some(0.0),
                max_residual_kw: 0.0,
                solve_ms: o.solve_ms,
            });
        }
    }
    let mut eval = Evaluation {
        report: RunReport::from_rows(rows),
        mip: Vec::with_capacity(results.len()),
        baseline: Vec::new(),
        oracle: Vec::with_capacity(results.len()),
    };
    for r in results {
        eval.mip.push(r.mip);
        eval.baseline.extend(r.baseline);
        eval.oracle.push(r.oracle);
    }
    Ok(eval)
}

fn test_window(data: &Dataset, n: usize) -> Vec<DayProfile> {
    data.test.iter().take(n).cloned().collect()
}

fn save_evaluation(dir: &Path, eval: &Evaluation, sys: &SystemConfig, days: &[DayProfile], k_seg: usize) -> Result<(), BenchError> {
    eval.report.save(dir)?;
    let traj_dir = dir.join("trajectories");
    fs::create_dir_all(&traj_dir)?;
    for t in &eval.mip {
        save_trajectory(traj_dir.join(format!("{MIP_DQN}_{}.csv", t.label)), t, sys)?;
    }
    for t in &eval.baseline {
        save_trajectory(traj_dir.join(format!("{BASELINE}_{}.csv", t.label)), t, sys)?;
    }
    for (o, day) in eval.oracle.iter().zip(days) {
        if let Some(o) = o {
            save_schedule(&traj_dir, o, &HorizonProblem::new(sys, day, k_seg))?;
        }
    }
    Ok(())
}

/// Constrained dispatch on the test window, scored against the oracle.
pub fn cmd_evaluate(cfg: &BenchConfig) -> Result<RunReport, BenchError> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let data = cfg.dataset()?;
    let model = ModelArtifacts::load(cfg.model_dir())?;
    let days = test_window(&data, cfg.eval_days);
    let eval = evaluate_days(
        &sys,
        &model,
        &days,
        &cfg.dispatch,
        &cfg.train.reward,
        cfg.oracle_segments,
        false,
        cfg.workers,
    )?;
    save_evaluation(&cfg.out_dir.join("evaluate"), &eval, &sys, &days, cfg.oracle_segments)?;
    Ok(eval.report)
}

/// Cumulative cost and unbalance across the window, per algorithm.
pub fn write_cumulative<W: Write>(writer: W, report: &RunReport) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["algorithm", "day_index", "day", "cum_cost_usd", "cum_unbalance_kw"])?;
    for s in &report.summary {
        let (mut cost, mut unb) = (0.0, 0.0);
        for (i, r) in report.rows_for(&s.algorithm).enumerate() {
            cost += r.cost_usd;
            unb += r.unbalance_kw;
            w.write_record([
                s.algorithm.clone(),
                (i + 1).to_string(),
                r.day.clone(),
                cost.to_string(),
                unb.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Evaluation plus the unconstrained baseline on the compare window.
pub fn cmd_compare(cfg: &BenchConfig) -> Result<RunReport, BenchError> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let data = cfg.dataset()?;
    let model = ModelArtifacts::load(cfg.model_dir())?;
    let days = test_window(&data, cfg.compare_days);
    let eval = evaluate_days(
        &sys,
        &model,
        &days,
        &cfg.dispatch,
        &cfg.train.reward,
        cfg.oracle_segments,
        true,
        cfg.workers,
    )?;
    let dir = cfg.out_dir.join("compare");
    save_evaluation(&dir, &eval, &sys, &days, cfg.oracle_segments)?;
    write_cumulative(fs::File::create(dir.join("cumulative.csv"))?, &eval.report)?;
    Ok(eval.report)
}

/// Trains and evaluates on the multi-ESS system, and writes the trajectory
/// of the test day with the highest net-load peak.
pub fn cmd_large_case(cfg: &BenchConfig) -> Result<RunReport, BenchError> {
    cfg.validate()?;
    let sys = cfg.large_system()?;
    let data = cfg.dataset()?;
    let dir = cfg.out_dir.join("large_case");
    let mut tc = cfg.train.clone();
    tc.seed = cfg.seeds[0];
    let run = train_model(&sys, &data.train, &tc)?;
    run.model.save(dir.join("model"))?;
    save_curves(dir.join("curves.csv"), &run.curves)?;

    let mut days = test_window(&data, cfg.eval_days);
    let peak = data
        .test
        .iter()
        .max_by(|a, b| a.peak_net_load().total_cmp(&b.peak_net_load()))
        .expect("test split is non-empty");
    if !days.iter().any(|d| d.label() == peak.label()) {
        days.push(peak.clone());
    }
    let eval = evaluate_days(
        &sys,
        &run.model,
        &days,
        &cfg.dispatch,
        &tc.reward,
        cfg.oracle_segments,
        false,
        cfg.workers,
    )?;
    save_evaluation(&dir, &eval, &sys, &days, cfg.oracle_segments)?;
    let peak_traj = eval.mip.iter().find(|t| t.label == peak.label()).expect("peak day evaluated");
    save_trajectory(dir.join("peak_day.csv"), peak_traj, &sys)?;
    Ok(eval.report)
}

/// Writes the max-Q model for `state` (default: the start of the first test day).
pub fn cmd_export_mip(cfg: &BenchConfig, state: Option<EnvState>) -> Result<PathBuf, BenchError> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let model = ModelArtifacts::load(cfg.model_dir())?;
    let (state, label) = match state {
        Some(s) => (s, "state".to_string()),
        None => {
            let data = cfg.dataset()?;
            let day = &data.test[0];
            (evaluation_start(day, &sys).map_err(|e| BenchError::Config(e.to_string()))?, day.label())
        }
    };
    if state.dg_prev.len() != sys.dgs.len() || state.soc.len() != sys.esss.len() {
        return Err(BenchError::Config("state does not match the system".into()));
    }
    let dm = build_dispatch_model(&model.q_net, &model.features, &sys, &state)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join(format!("dispatch_{label}_t{}.lp", state.t));
    export_lp(&dm.model, &path, dm.input_labels)?;
    Ok(path)
}

/// Writes a synthetic profile CSV.
pub fn cmd_synth_data(cfg: &BenchConfig) -> Result<PathBuf, BenchError> {
    if cfg.synth_days == 0 {
        return Err(BenchError::Config("synth_days must be positive".into()));
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("profiles.csv");
    profiles::save_csv(&path, &synthesize(cfg.synth_seed, cfg.synth_days, &cfg.season))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_metric() {
        assert!((relative_error_pct(94.0, 79.93) - 17.603).abs() < 1e-3);
        assert_eq!(relative_error_pct(50.0, 50.0), 0.0);
    }

    #[test]
    fn aggregates_follow_rows() {
        let row = |alg: &str, cost: f64, err: Option<f64>| ReportRow {
            day: "d".into(),
            algorithm: alg.into(),
            cost_usd: cost,
            unbalance_kw: 0.0,
            unbalance_value_usd: 0.0,
            error_pct: err,
            max_residual_kw: 0.0,
            solve_ms: 2.0,
        };
        let r = RunReport::from_rows(vec![row("a", 10.0, Some(5.0)), row("a", 20.0, Some(15.0)), row("b", 1.0, None)]);
        let a = r.algorithm("a").unwrap();
        assert_eq!(a.mean_cost_usd, 15.0);
        assert_eq!(a.mean_error_pct, Some(10.0));
        assert_eq!(a.error_std_pct, Some(5.0));
        assert_eq!(r.algorithm("b").unwrap().mean_error_pct, None);
    }

    #[test]
    fn ci_of_constant_sample_is_zero() {
        assert_eq!(mean_ci95(&[3.0, 3.0, 3.0]), (3.0, 0.0));
        let (m, h) = mean_ci95(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((h - 4.303 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(serde_json::from_str::<BenchConfig>(r#"{"epochz": 3}"#).is_err());
        let c: BenchConfig = serde_json::from_str(r#"{"eval_days": 3}"#).unwrap();
        assert_eq!(c.eval_days, 3);
        assert_eq!(c.train, TrainConfig::default());
    }
}
