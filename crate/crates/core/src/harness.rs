//! Seeded Monte Carlo engine for the two experiments and the `t` tuner.
//!
//! Every trial draws its traffic from stream 0 and its noise from stream 1 of
//! [`seed_schedule`]. Trial seeds depend on the grid point (`n` or `u`) and the
//! trial index but not on the SNR, so all SNR values of a point see the same
//! users, channels and normalized noise.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::airlink::{sigma2_from_snr_db, transmit_receive};
use crate::analytics::{capacity_point, CapacityPoint};
use crate::detector::{run_detector, BlockBudget, DetectionReport, DetectorParams, LsqStatus};
use crate::hisparse::HiSupport;
use crate::spectral::DftOperator;
use crate::traffic::{
    assign_users, collision_census, draw_cirs, draw_data, draw_subchannel_plan, effective_channels, Cir, DataMatrix,
    Placement, SystemConfig, UserAssignment,
};
use crate::{Error, Result, C64};

const TRAFFIC_STREAM: u32 = 0;
const NOISE_STREAM: u32 = 1;

/// SplitMix64 output function; a bijection on `u64`.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sub-stream `stream` of trial `trial`. Injective in
/// `(trial, stream)` for `trial < 2^40`, `stream < 2^24`.
pub fn seed_schedule(master: u64, trial: u64, stream: u32) -> u64 {
    let counter = (trial << 24) | u64::from(stream & 0x00FF_FFFF);
    splitmix64(splitmix64(master).wrapping_add(counter))
}

/// Grid point `point`, trial `trial` as one trial counter.
pub fn trial_counter(point: usize, trial: usize) -> u64 {
    ((point as u64) << 20) | trial as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionConvention {
    /// Block selected and in-block support exactly right.
    #[default]
    Strict,
    /// Block selected.
    BlockLevel,
}

impl DetectionConvention {
    pub fn from_strict(strict: bool) -> Self {
        if strict {
            Self::Strict
        } else {
            Self::BlockLevel
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ChannelMetrics {
    pub users: usize,
    pub collision_free: usize,
    pub colliding_users: usize,
    pub collisions: usize,
    pub detected: usize,
    pub missed: usize,
    /// Selected blocks without any user.
    pub false_positives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TrialTotals {
    pub users: usize,
    pub collision_free: usize,
    pub colliding_users: usize,
    pub detected: usize,
    pub missed: usize,
    pub false_positives: usize,
    /// Data symbols of detected users (slots `1..t`).
    pub symbols: usize,
    /// Wrong or erased hard decisions among them.
    pub symbol_errors: usize,
    /// `Σ |d* − d|` over those symbols; erasures excluded.
    pub data_error_sum: f64,
    pub data_error_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub seed: u64,
    pub config: SystemConfig,
    pub channels: Vec<ChannelMetrics>,
    pub totals: TrialTotals,
    /// Every sub-channel's detected support equals its true support.
    pub exact_support: bool,
    /// Largest `‖h*^i − h^i‖/‖h^i‖` over sub-channels with exact support and a
    /// completed restricted solve.
    pub max_channel_error: Option<f64>,
    #[serde(skip)]
    pub runtime_ms: f64,
}

impl TrialResult {
    pub fn detection_rate(&self) -> f64 {
        ratio(self.totals.detected as f64, self.totals.collision_free as f64)
    }

    pub fn symbol_error_rate(&self) -> f64 {
        ratio(self.totals.symbol_errors as f64, self.totals.symbols as f64)
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Everything generated for one trial, kept for inspection.
#[derive(Debug, Clone)]
pub struct TrialScene {
    pub assignment: UserAssignment,
    pub cirs: Vec<Cir>,
    pub data: DataMatrix,
    pub reports: Vec<DetectionReport>,
}

/// One complete trial: traffic, measurements, detection and scoring.
pub fn run_trial(
    cfg: &SystemConfig,
    params: &DetectorParams,
    convention: DetectionConvention,
    master: u64,
    counter: u64,
) -> Result<(TrialResult, TrialScene)> {
    cfg.validate()?;
    let start = Instant::now();
    let traffic_seed = seed_schedule(master, counter, TRAFFIC_STREAM);
    let mut rng = ChaCha8Rng::seed_from_u64(traffic_seed);
    let plan = draw_subchannel_plan(cfg, &mut rng);
    let assignment = assign_users(cfg, &mut rng);
    let cirs = draw_cirs(cfg, &mut rng);
    let data = draw_data(cfg, &mut rng);
    let channels = effective_channels(&assignment, &cirs, &data, cfg);

    let dft = Arc::new(DftOperator::new(cfg.n)?);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed_schedule(master, counter, NOISE_STREAM));
    let measurements = transmit_receive(&channels, &plan, cfg, &dft, &mut noise_rng)?;
    let reports = run_detector(&measurements, params, cfg.r, cfg.s, cfg.data_alphabet)?;

    let census = collision_census(&assignment, cfg);
    let mut metrics = Vec::with_capacity(cfg.c);
    let mut totals = TrialTotals::default();
    let mut exact_support = true;
    let mut max_channel_error: Option<f64> = None;
    for ((ch, report), cen) in channels.iter().zip(&reports).zip(&census) {
        let support = report.support();
        let selected = support.block_indices();
        let mut m = ChannelMetrics {
            users: cen.users,
            collision_free: cen.collision_free,
            colliding_users: cen.users - cen.collision_free,
            collisions: cen.collisions,
            ..Default::default()
        };
        m.false_positives = selected.iter().filter(|&&k| ch.users_in_block(k).is_empty()).count();
        for &k in &ch.active_blocks() {
            let users = ch.users_in_block(k);
            if users.len() != 1 {
                continue;
            }
            let user = users[0];
            let hit = match convention {
                DetectionConvention::BlockLevel => selected.contains(&k),
                DetectionConvention::Strict => support.omega(k) == Some(cirs[user].support.as_slice()),
            };
            if !hit {
                m.missed += 1;
                continue;
            }
            m.detected += 1;
            if let Some(sym) = report.symbols.iter().find(|s| s.block == k) {
                for i in 1..cfg.t {
                    let truth = data.get(user, i);
                    totals.symbols += 1;
                    if sym.decisions[i] != Some(truth) {
                        totals.symbol_errors += 1;
                    }
                    if let Some(raw) = sym.raw[i] {
                        totals.data_error_sum += (raw - truth).norm();
                        totals.data_error_count += 1;
                    }
                }
            }
        }

        let truth_support = HiSupport::of_family(&[ch.pure()], cfg.s);
        if *support == truth_support {
            if report.lsq == LsqStatus::Solved {
                for (i, est) in report.estimates.iter().enumerate() {
                    let h = ch.slot(i);
                    let energy = crate::norm(&h);
                    if energy > 0.0 {
                        let diff: Vec<C64> = est.iter().zip(&h).map(|(a, b)| a - b).collect();
                        let rel = crate::norm(&diff) / energy;
                        max_channel_error = Some(max_channel_error.map_or(rel, |e: f64| e.max(rel)));
                    }
                }
            }
        } else {
            exact_support = false;
        }

        totals.users += m.users;
        totals.collision_free += m.collision_free;
        totals.colliding_users += m.colliding_users;
        totals.detected += m.detected;
        totals.missed += m.missed;
        totals.false_positives += m.false_positives;
        metrics.push(m);
    }

    let result = TrialResult {
        seed: traffic_seed,
        config: cfg.clone(),
        channels: metrics,
        totals,
        exact_support,
        max_channel_error,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((result, TrialScene { assignment, cirs, data, reports }))
}

/// Aggregates over the trials of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSummary {
    pub snr_db: f64,
    pub sigma2: f64,
    pub trials: usize,
    pub users_mean: f64,
    pub collision_free_mean: f64,
    pub detected_mean: f64,
    pub missed_mean: f64,
    pub false_positives_mean: f64,
    /// Detected over collision-free users, pooled over trials.
    pub detection_rate: f64,
    /// Detected over all users, pooled over trials.
    pub per_user_rate: f64,
    /// Fraction of trials whose support was exact in every sub-channel.
    pub exact_support_rate: f64,
    pub symbol_error_rate: f64,
    pub symbols: usize,
    pub data_error_mean: f64,
    /// Standard error of the per-trial detected-over-collision-free rate.
    pub detection_rate_stderr: f64,
    pub max_channel_error: Option<f64>,
}

pub fn summarize(snr_db: f64, sigma2: f64, results: &[TrialResult]) -> PointSummary {
    let n = results.len().max(1) as f64;
    let sum = |f: &dyn Fn(&TrialTotals) -> f64| results.iter().map(|r| f(&r.totals)).sum::<f64>();
    let detected = sum(&|t| t.detected as f64);
    let free = sum(&|t| t.collision_free as f64);
    let users = sum(&|t| t.users as f64);
    let symbols = sum(&|t| t.symbols as f64);
    let rates: Vec<f64> = results.iter().map(TrialResult::detection_rate).collect();
    let mean_rate = rates.iter().sum::<f64>() / n;
    let var = if rates.len() > 1 {
        rates.iter().map(|r| (r - mean_rate).powi(2)).sum::<f64>() / (rates.len() - 1) as f64
    } else {
        0.0
    };
    PointSummary {
        snr_db,
        sigma2,
        trials: results.len(),
        users_mean: users / n,
        collision_free_mean: free / n,
        detected_mean: detected / n,
        missed_mean: sum(&|t| t.missed as f64) / n,
        false_positives_mean: sum(&|t| t.false_positives as f64) / n,
        detection_rate: ratio(detected, free),
        per_user_rate: ratio(detected, users),
        exact_support_rate: results.iter().filter(|r| r.exact_support).count() as f64 / n,
        symbol_error_rate: ratio(sum(&|t| t.symbol_errors as f64), symbols),
        symbols: symbols as usize,
        data_error_mean: ratio(sum(&|t| t.data_error_sum), sum(&|t| t.data_error_count as f64)),
        detection_rate_stderr: (var / n).sqrt(),
        max_channel_error: results.iter().filter_map(|r| r.max_channel_error).reduce(f64::max),
    }
}

/// Runs `trials` trials of one configuration in parallel; results come back in
/// trial order.
pub fn run_trials(
    cfg: &SystemConfig,
    params: &DetectorParams,
    convention: DetectionConvention,
    master: u64,
    point: usize,
    trials: usize,
) -> Result<Vec<TrialResult>> {
    (0..trials)
        .into_par_iter()
        .map(|k| run_trial(cfg, params, convention, master, trial_counter(point, k)).map(|x| x.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    #[default]
    Exp1,
    Exp2,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub kind: ExperimentKind,
    /// Experiment 1 axis.
    #[serde(default)]
    pub n_list: Vec<usize>,
    /// Experiment 2 axis.
    #[serde(default)]
    pub u_list: Vec<usize>,
    /// System SNRs in dB; `inf` means noise free.
    pub snr_list: Vec<f64>,
    pub trials: usize,
    #[serde(default = "default_probability")]
    pub p_u: f64,
    #[serde(default = "default_probability")]
    pub p_md: f64,
    #[serde(default = "default_true")]
    pub strict_detection: bool,
    /// Candidate `t` values for the tuner.
    #[serde(default)]
    pub t_grid: Vec<usize>,
    /// Detection rate the tuner aims for; `1 − p_md` when absent.
    #[serde(default)]
    pub target_rate: Option<f64>,
}

fn default_probability() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.trials == 0 {
            return fail("trials must be at least 1");
        }
        if self.snr_list.is_empty() {
            return fail("snr_list must not be empty");
        }
        if self.snr_list.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return fail("snr_list entries must be numbers or +inf");
        }
        for (name, p) in [("p_u", self.p_u), ("p_md", self.p_md)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1) (got {p})")));
            }
        }
        match self.kind {
            ExperimentKind::Exp1 if self.n_list.is_empty() => fail("n_list must not be empty"),
            ExperimentKind::Exp2 if self.u_list.is_empty() => fail("u_list must not be empty"),
            _ => Ok(()),
        }
    }

    pub fn convention(&self) -> DetectionConvention {
        DetectionConvention::from_strict(self.strict_detection)
    }

    pub fn target(&self) -> f64 {
        self.target_rate.unwrap_or(1.0 - self.p_md)
    }
}

/// Experiment-1 system for one `n`: `r = n/s`, `m = 2^⌊log₂(k̄_u k_s)⌋`,
/// `c = n/m`, `k̄_u` users in every sub-channel.
pub fn experiment1_config(
    template: &SystemConfig,
    n: usize,
    p_u: f64,
    p_md: f64,
) -> Result<(SystemConfig, CapacityPoint)> {
    let point = capacity_point(n, template.s, template.k_s, p_u, p_md)?;
    let mut cfg = template.clone();
    cfg.n = n;
    cfg.r = point.r;
    cfg.m = point.m;
    cfg.c = point.c;
    cfg.u = point.kbar_u * point.c;
    cfg.placement = Placement::Homogeneous;
    cfg.validate()?;
    Ok((cfg, point))
}

fn with_snr(cfg: &SystemConfig, snr_db: f64) -> SystemConfig {
    let mut c = cfg.clone();
    c.sigma2 = sigma2_from_snr_db(snr_db);
    c
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exp1Row {
    pub n: usize,
    pub capacity: CapacityPoint,
    pub summary: PointSummary,
}

/// Experiment 1 over `spec.n_list × spec.snr_list`. The detector's block
/// budget is the derived `k̄_u`.
pub fn run_experiment1(
    template: &SystemConfig,
    params: &DetectorParams,
    spec: &ExperimentSpec,
) -> Result<Vec<Exp1Row>> {
    spec.validate()?;
    let mut rows = Vec::new();
    for (point, &n) in spec.n_list.iter().enumerate() {
        let (cfg, capacity) = experiment1_config(template, n, spec.p_u, spec.p_md)?;
        let mut p = *params;
        p.k_u = BlockBudget::Fixed(capacity.kbar_u);
        p.k_s = cfg.k_s;
        for &snr in &spec.snr_list {
            let c = with_snr(&cfg, snr);
            let results = run_trials(&c, &p, spec.convention(), cfg.seed, point, spec.trials)?;
            rows.push(Exp1Row { n, capacity, summary: summarize(snr, c.sigma2, &results) });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exp2Row {
    pub u: usize,
    pub summary: PointSummary,
    /// Detected over all users.
    pub recovery_rate: f64,
}

/// Experiment 2 over `spec.u_list × spec.snr_list` with uniform placement and
/// the block budget estimated by clustering.
pub fn run_experiment2(
    template: &SystemConfig,
    params: &DetectorParams,
    spec: &ExperimentSpec,
) -> Result<Vec<Exp2Row>> {
    spec.validate()?;
    let mut p = *params;
    p.k_u = BlockBudget::Estimate;
    let mut rows = Vec::new();
    for (point, &u) in spec.u_list.iter().enumerate() {
        let mut cfg = template.clone();
        cfg.u = u;
        cfg.placement = Placement::Uniform;
        cfg.validate()?;
        for &snr in &spec.snr_list {
            let c = with_snr(&cfg, snr);
            let results = run_trials(&c, &p, spec.convention(), cfg.seed, point, spec.trials)?;
            let summary = summarize(snr, c.sigma2, &results);
            let recovery_rate = summary.per_user_rate;
            rows.push(Exp2Row { u, summary, recovery_rate });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneResult {
    /// Smallest adequate `t`, if any.
    pub t: Option<usize>,
    pub target: f64,
    pub rates: Vec<(usize, f64)>,
}

/// Noise-free search for the smallest `t` in `t_grid` whose pooled detection
/// rate reaches `target`. All `t` values reuse the same trial seeds.
pub fn tune_t(
    template: &SystemConfig,
    params: &DetectorParams,
    convention: DetectionConvention,
    target: f64,
    t_grid: &[usize],
    trials: usize,
) -> Result<TuneResult> {
    if trials < 50 {
        return Err(Error::InvalidConfig(format!("tune_t needs at least 50 trials (got {trials})")));
    }
    if t_grid.is_empty() || t_grid.contains(&0) {
        return Err(Error::InvalidConfig("t_grid must be nonempty with entries >= 1".into()));
    }
    let mut grid = t_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let mut rates = Vec::new();
    let mut found = None;
    for t in grid {
        let mut cfg = template.clone();
        cfg.t = t;
        cfg.sigma2 = 0.0;
        let results = run_trials(&cfg, params, convention, cfg.seed, 0, trials)?;
        let rate = summarize(f64::INFINITY, 0.0, &results).detection_rate;
        rates.push((t, rate));
        if rate >= target {
            found = Some(t);
            break;
        }
    }
    Ok(TuneResult { t: found, target, rates })
}
