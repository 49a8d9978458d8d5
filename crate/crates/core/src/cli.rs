//! Command-line front end. A TOML file with `[system]`, `[experiment]`,
//! `[detector]` and `[output]` sections drives every subcommand; flags
//! override single values. Exit codes: 0 success, 1 runtime failure, 2 invalid
//! configuration (nothing is written).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analytics::{
    baseline_no_subchannel, capacity_point, coherence_tail, collision_bound, overfill_bound, parameter_recipe,
    select_kbar_u, sparsity_capture_failure, supported_users, Bound, RecipeInputs,
};
use crate::detector::{BlockBudget, DetectorParams};
use crate::harness::{experiment1_config, run_experiment1, run_experiment2, tune_t, ExperimentKind, ExperimentSpec};
use crate::traffic::{PlanMode, SystemConfig};

pub const EXP1_HEADER: [&str; 7] =
    ["n", "snr_db", "trial_count", "detected_mean", "detection_rate", "supported_users_formula", "baseline_users"];

pub const EXP2_HEADER: [&str; 6] =
    ["u", "snr_db", "recovered_mean", "recovery_rate", "false_positives_mean", "opt_collision_free_mean"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Also write a JSON summary next to the CSV.
    #[serde(default = "default_true")]
    pub json: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_dir(), json: true }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from(".")
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub system: SystemConfig,
    pub experiment: ExperimentSpec,
    pub detector: DetectorParams,
    #[serde(default)]
    pub output: OutputSection,
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: crate::Error| CliError::Config(e.to_string());
        self.experiment.validate().map_err(cfg)?;
        match self.experiment.kind {
            ExperimentKind::Exp1 => {
                for &n in &self.experiment.n_list {
                    experiment1_config(&self.system, n, self.experiment.p_u, self.experiment.p_md).map_err(cfg)?;
                }
            }
            _ => self.system.validate().map_err(cfg)?,
        }
        self.detector.validate(self.system.r, self.system.s).map_err(cfg)
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.system.seed = seed;
        }
        if let Some(dir) = &o.out {
            self.output.dir = dir.clone();
        }
        if let Some(trials) = o.trials {
            self.experiment.trials = trials;
        }
        if let Some(list) = &o.snr_list {
            self.experiment.snr_list = list.clone();
        }
        if let Some(strict) = o.strict_detection {
            self.experiment.strict_detection = strict;
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "hira", version, about = "Sub-channelized DFT random access simulator")]
pub struct Cli {
    /// Increase log verbosity (-v, -vv).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Supported users versus n (writes exp1_results.csv).
    Experiment1(Overrides),
    /// Recovered users versus load (writes exp2_results.csv).
    Experiment2(Overrides),
    /// Print bounds and the parameter recipe.
    Analyze(AnalyzeArgs),
    /// Smallest t in the grid reaching the target noise-free detection rate.
    TuneT(Overrides),
}

#[derive(Debug, Clone, Args)]
pub struct Overrides {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Comma-separated system SNRs in dB (`inf` for noise free).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub snr_list: Option<Vec<f64>>,
    #[arg(long)]
    pub strict_detection: Option<bool>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long, default_value_t = 2048)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub s: usize,
    #[arg(long, default_value_t = 4)]
    pub k_s: usize,
    /// Pilots per sub-channel; `n/s` when absent.
    #[arg(long)]
    pub r: Option<usize>,
    /// Sub-channel size; the Experiment-1 rule when absent.
    #[arg(long)]
    pub m: Option<usize>,
    /// Users; the Experiment-1 supported count when absent.
    #[arg(long)]
    pub u: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub p_u: f64,
    #[arg(long, default_value_t = 0.1)]
    pub p_md: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 3.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0.5)]
    pub c_o: f64,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 100)]
    pub t: usize,
    #[arg(long, value_parser = parse_plan_mode, default_value = "fixed")]
    pub plan_mode: PlanMode,
    /// Also write analyze.json into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_plan_mode(s: &str) -> Result<PlanMode, String> {
    match s {
        "fixed" => Ok(PlanMode::Fixed),
        "independent" => Ok(PlanMode::Independent),
        _ => Err(format!("unknown plan mode {s:?} (fixed | independent)")),
    }
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let outcome = match &cli.command {
        Command::Experiment1(o) => cmd_experiment1(o),
        Command::Experiment2(o) => cmd_experiment2(o),
        Command::Analyze(a) => cmd_analyze(a),
        Command::TuneT(o) => cmd_tune_t(o),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn load_config(o: &Overrides, kind: ExperimentKind) -> Result<CliConfig, CliError> {
    let mut cfg = CliConfig::load(&o.config)?;
    cfg.apply(o);
    cfg.experiment.kind = kind;
    cfg.validate()?;
    Ok(cfg)
}

fn write_outputs(dir: &Path, files: &[(&str, String)]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(runtime)?;
    for (name, body) in files {
        fs::write(dir.join(name), body).map_err(runtime)?;
    }
    Ok(())
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> Result<String, CliError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).map_err(runtime)?;
    for row in rows {
        w.write_record(&row).map_err(runtime)?;
    }
    String::from_utf8(w.into_inner().map_err(runtime)?).map_err(runtime)
}

pub fn cmd_experiment1(o: &Overrides) -> Result<(), CliError> {
    let cfg = load_config(o, ExperimentKind::Exp1)?;
    let rows = run_experiment1(&cfg.system, &cfg.detector, &cfg.experiment).map_err(runtime)?;
    let records = rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.summary.snr_db.to_string(),
                r.summary.trials.to_string(),
                r.summary.detected_mean.to_string(),
                r.summary.detection_rate.to_string(),
                r.capacity.supported_users.to_string(),
                r.capacity.baseline_users.to_string(),
            ]
        })
        .collect();
    let mut files = vec![("exp1_results.csv", csv_text(&EXP1_HEADER, records)?)];
    if cfg.output.json {
        let summary = serde_json::json!({ "config": cfg, "rows": rows });
        files.push(("exp1_summary.json", serde_json::to_string_pretty(&summary).map_err(runtime)? + "\n"));
    }
    write_outputs(&cfg.output.dir, &files)
}

pub fn cmd_experiment2(o: &Overrides) -> Result<(), CliError> {
    let cfg = load_config(o, ExperimentKind::Exp2)?;
    let rows = run_experiment2(&cfg.system, &cfg.detector, &cfg.experiment).map_err(runtime)?;
    let records = rows
        .iter()
        .map(|r| {
            vec![
                r.u.to_string(),
                r.summary.snr_db.to_string(),
                r.summary.detected_mean.to_string(),
                r.recovery_rate.to_string(),
                r.summary.false_positives_mean.to_string(),
                r.summary.collision_free_mean.to_string(),
            ]
        })
        .collect();
    let mut files = vec![("exp2_results.csv", csv_text(&EXP2_HEADER, records)?)];
    if cfg.output.json {
        let summary = serde_json::json!({ "config": cfg, "rows": rows });
        files.push(("exp2_summary.json", serde_json::to_string_pretty(&summary).map_err(runtime)? + "\n"));
    }
    write_outputs(&cfg.output.dir, &files)
}

pub fn cmd_tune_t(o: &Overrides) -> Result<(), CliError> {
    let mut cfg = CliConfig::load(&o.config)?;
    cfg.apply(o);
    cfg.validate()?;
    if cfg.experiment.t_grid.is_empty() {
        return Err(CliError::Config("experiment.t_grid must not be empty for tune-t".into()));
    }
    if cfg.experiment.trials < 50 {
        return Err(CliError::Config(format!("tune-t needs at least 50 trials (got {})", cfg.experiment.trials)));
    }
    let (template, mut params) = (cfg.system.clone(), cfg.detector);
    let template = match cfg.experiment.kind {
        ExperimentKind::Exp1 => {
            let n = cfg.experiment.n_list[0];
            let (sys, point) = experiment1_config(&template, n, cfg.experiment.p_u, cfg.experiment.p_md)
                .map_err(|e| CliError::Config(e.to_string()))?;
            params.k_u = BlockBudget::Fixed(point.kbar_u);
            sys
        }
        ExperimentKind::Exp2 => {
            params.k_u = BlockBudget::Estimate;
            template
        }
        ExperimentKind::Custom => template,
    };
    let result = tune_t(
        &template,
        &params,
        cfg.experiment.convention(),
        cfg.experiment.target(),
        &cfg.experiment.t_grid,
        cfg.experiment.trials,
    )
    .map_err(runtime)?;
    let mut text = String::new();
    for (t, rate) in &result.rates {
        let _ = writeln!(text, "t = {t:>5}  detection rate = {rate:.4}");
    }
    match result.t {
        Some(t) => {
            let _ = writeln!(text, "smallest adequate t = {t} (target {})", result.target);
        }
        None => {
            let _ = writeln!(text, "no t in the grid reaches the target {}", result.target);
        }
    }
    print!("{text}");
    let body = serde_json::to_string_pretty(&result).map_err(runtime)? + "\n";
    write_outputs(&cfg.output.dir, &[("tune_t.json", body)])
}

fn bound_line(out: &mut String, name: &str, b: &Bound) {
    let flag = if b.vacuous { "  [vacuous]" } else { "" };
    let _ = writeln!(out, "{name:<32} {:.6e}{flag}", b.value);
}

/// Renders the bound table; errors are configuration errors.
pub fn analyze_report(a: &AnalyzeArgs) -> Result<(String, serde_json::Value), CliError> {
    let cfg = |e: crate::Error| CliError::Config(e.to_string());
    let recipe = parameter_recipe(RecipeInputs {
        c_o: a.c_o,
        kappa: a.kappa,
        epsilon: a.epsilon,
        s: a.s,
        k_s: a.k_s,
        plan_mode: a.plan_mode,
    })
    .map_err(cfg)?;
    let r = a.r.unwrap_or(a.n.checked_div(a.s).unwrap_or(0));
    let kbar = select_kbar_u(r, a.p_u).map_err(cfg)?;
    let m = match a.m {
        Some(m) => m,
        None => capacity_point(a.n, a.s, a.k_s, a.p_u, a.p_md).map_err(cfg)?.m,
    };
    if m == 0 || m > a.n || !a.n.is_multiple_of(m) {
        return Err(CliError::Config(format!("m = {m} must divide n = {}", a.n)));
    }
    let c = a.n / m;
    let supported = supported_users(a.p_u, kbar, c, a.p_md);
    let u = a.u.unwrap_or(supported.round() as usize);
    let k_u = 2.0 * m as f64 * u as f64 / a.n as f64;
    let baseline = baseline_no_subchannel(a.n, a.p_u).map_err(cfg)?;

    let overfill = overfill_bound(m, a.n, u, a.lambda).map_err(cfg)?;
    let collision = collision_bound(k_u, r).map_err(cfg)?;
    let capture = sparsity_capture_failure(m, a.n, u, r).map_err(cfg)?;
    let coherence = coherence_tail(m, k_u.max(f64::MIN_POSITIVE), a.k_s, a.tau, a.n).map_err(cfg)?;
    let failure = recipe.failure_probability(a.n, a.t, r);

    let mut out = String::new();
    let _ = writeln!(out, "n = {}, m = {m}, c = {c}, r = {r}, s = {}, k_s = {}, u = {u}", a.n, a.s, a.k_s);
    let _ = writeln!(out, "k_u = 2(m/n)u                    {k_u:.4}");
    let _ = writeln!(out, "k̄_u (p_u = {})                  {kbar}", a.p_u);
    let _ = writeln!(out, "supported users                  {supported:.4}");
    let _ = writeln!(out, "baseline users (no sub-channels) {baseline}");
    bound_line(&mut out, "overfill bound", &overfill);
    bound_line(&mut out, "collision bound", &collision.bound);
    let _ = writeln!(out, "{:<32} {:.6e}", "collision pair count", collision.pair_count);
    bound_line(&mut out, "sparsity capture failure", &capture);
    bound_line(&mut out, "coherence tail", &coherence);
    bound_line(&mut out, "recipe failure probability", &failure);
    let _ = writeln!(out, "recipe n_min                     {}", recipe.n_min);
    let _ = writeln!(out, "recipe r_min(n)                  {:.4}", recipe.r_min(a.n));
    let _ = writeln!(out, "recipe u_max(n)                  {:.4}", recipe.u_max(a.n));
    let _ = writeln!(out, "recipe m(n, u)                   {}", if u > 0 { recipe.m(a.n, u as f64) } else { a.n });
    let _ = writeln!(out, "sigma^2 rule                     {}", recipe.sigma2_rule);
    let _ = writeln!(out, "t rule                           {}", recipe.t_rule);

    let json = serde_json::json!({
        "n": a.n, "m": m, "c": c, "r": r, "u": u, "k_u": k_u,
        "kbar_u": kbar, "supported_users": supported, "baseline_users": baseline,
        "overfill": overfill, "collision": collision, "sparsity_capture": capture,
        "coherence_tail": coherence, "failure_probability": failure, "recipe": recipe,
    });
    Ok((out, json))
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<(), CliError> {
    let (text, json) = analyze_report(a)?;
    print!("{text}");
    if let Some(dir) = &a.out {
        let body = serde_json::to_string_pretty(&json).map_err(runtime)? + "\n";
        write_outputs(dir, &[("analyze.json", body)])?;
    }
    Ok(())
}
