//! Receive chains. The end-to-end chain convolves every effective channel with
//! its sub-channel's base pilot, adds white time-domain noise and samples each
//! sub-channel's DFT rows. The proxy chain evaluates `b = A(h + z)` directly.
//! After renormalization (net scale `1/√n` and removal of the pilot phases)
//! both produce the same numbers when their noise is coupled.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::harness::seed_schedule;
use crate::pilots::{make_pilot_family, PhasePolicy, PilotFamily};
use crate::spectral::{DftOperator, Direction, SubsampledDft};
use crate::traffic::{Chain, PlanMode, StackedChannel, SubChannelPlan, SystemConfig};
use crate::{Error, Result, C64};

/// Operators `A_j^i`, indexed `[j][i]`; fixed plans share one per sub-channel.
pub type OperatorGrid = Vec<Vec<Arc<SubsampledDft>>>;

pub fn plan_operators(dft: &Arc<DftOperator>, plan: &SubChannelPlan) -> Result<OperatorGrid> {
    (0..plan.channels())
        .map(|j| match plan.mode() {
            PlanMode::Fixed => {
                let op = Arc::new(SubsampledDft::new(dft.clone(), plan.rows(j, 0).to_vec())?);
                Ok(vec![op; plan.slots()])
            }
            PlanMode::Independent => (0..plan.slots())
                .map(|i| Ok(Arc::new(SubsampledDft::new(dft.clone(), plan.rows(j, i).to_vec())?)))
                .collect(),
        })
        .collect()
}

/// Base pilots for every sub-channel of every distinct partition.
#[derive(Debug, Clone)]
pub struct PilotBank {
    mode: PlanMode,
    families: Vec<Vec<PilotFamily>>,
}

impl PilotBank {
    /// Random phase policies get an independent phase stream per
    /// (partition, sub-channel).
    pub fn new(dft: &DftOperator, plan: &SubChannelPlan, cfg: &SystemConfig) -> Result<Self> {
        let partitions = match plan.mode() {
            PlanMode::Fixed => 1,
            PlanMode::Independent => plan.slots(),
        };
        let families = (0..partitions)
            .map(|i| {
                (0..plan.channels())
                    .map(|j| {
                        let policy = match cfg.phase_policy {
                            PhasePolicy::Unit => PhasePolicy::Unit,
                            PhasePolicy::SeededRandom { seed } => {
                                PhasePolicy::SeededRandom { seed: seed_schedule(seed, i as u64, j as u32) }
                            }
                        };
                        make_pilot_family(dft, cfg.m, cfg.s, cfg.r, plan.rows(j, i).to_vec(), policy)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(Self { mode: plan.mode(), families })
    }

    pub fn family(&self, channel: usize, slot: usize) -> &PilotFamily {
        match self.mode {
            PlanMode::Fixed => &self.families[0][channel],
            PlanMode::Independent => &self.families[slot][channel],
        }
    }
}

#[derive(Debug, Clone)]
pub struct MeasurementSet {
    pub chain: Chain,
    /// `b_j^i`, indexed `[j][i]`.
    pub b: Vec<Vec<Vec<C64>>>,
    pub operators: OperatorGrid,
    /// Seed of the stream all noise of this set was drawn from.
    pub noise_seed: u64,
}

impl MeasurementSet {
    pub fn channels(&self) -> usize {
        self.b.len()
    }

    pub fn slots(&self) -> usize {
        self.b.first().map_or(0, Vec::len)
    }
}

/// Draws `CN(0, variance·I_len)`.
pub fn complex_gaussian(len: usize, variance: f64, rng: &mut impl Rng) -> Vec<C64> {
    let sd = (variance / 2.0).sqrt();
    (0..len)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re * sd, im * sd)
        })
        .collect()
}

fn padded(h: &[C64], n: usize) -> Vec<C64> {
    let mut v = vec![C64::new(0.0, 0.0); n];
    v[..h.len()].copy_from_slice(h);
    v
}

fn check_shapes(channels: &[StackedChannel], plan: &SubChannelPlan, cfg: &SystemConfig) -> Result<()> {
    crate::spectral::check_len(cfg.c, channels.len())?;
    crate::spectral::check_len(cfg.c, plan.channels())?;
    crate::spectral::check_len(cfg.t, plan.slots())?;
    for ch in channels {
        if ch.len() > cfg.n {
            return Err(Error::DimensionMismatch { expected: cfg.n, got: ch.len() });
        }
    }
    Ok(())
}

fn endtoend_core(
    channels: &[StackedChannel],
    plan: &SubChannelPlan,
    bank: &PilotBank,
    cfg: &SystemConfig,
    dft: &Arc<DftOperator>,
    mut noise: impl FnMut(usize) -> Option<Vec<C64>>,
) -> Result<(Vec<Vec<Vec<C64>>>, OperatorGrid)> {
    check_shapes(channels, plan, cfg)?;
    let operators = plan_operators(dft, plan)?;
    let n = cfg.n;
    let mut b = vec![Vec::with_capacity(cfg.t); cfg.c];
    let raw_to_proxy = 1.0 / (n as f64).sqrt();
    for i in 0..cfg.t {
        let mut y = noise(i).unwrap_or_else(|| vec![C64::new(0.0, 0.0); n]);
        for (j, ch) in channels.iter().enumerate() {
            if ch.is_empty() {
                continue;
            }
            let family = bank.family(j, i);
            if family.support() != plan.rows(j, i) {
                return Err(Error::InvalidArgument(format!(
                    "pilot support of sub-channel {j} does not match the plan in slot {i}"
                )));
            }
            let x = family.circulant_action(dft, &padded(&ch.slot(i), n))?;
            for (acc, v) in y.iter_mut().zip(x) {
                *acc += v;
            }
        }
        let spectrum = dft.apply(&y, Direction::Forward)?;
        for (j, bj) in b.iter_mut().enumerate() {
            let family = bank.family(j, i);
            let phases = family.phases();
            bj.push(
                family.support().iter().zip(phases).map(|(&p, ph)| spectrum[p] * ph.conj() * raw_to_proxy).collect(),
            );
        }
    }
    Ok((b, operators))
}

/// End-to-end chain with fresh `e^i ~ CN(0, σ² I_n)` per slot, renormalized to
/// the proxy convention.
pub fn transmit_receive_endtoend(
    channels: &[StackedChannel],
    plan: &SubChannelPlan,
    bank: &PilotBank,
    cfg: &SystemConfig,
    dft: &Arc<DftOperator>,
    rng: &mut impl Rng,
) -> Result<MeasurementSet> {
    let noise_seed: u64 = rng.random();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let sigma2 = cfg.sigma2;
    let (b, operators) = endtoend_core(channels, plan, bank, cfg, dft, |_| {
        (sigma2 > 0.0).then(|| complex_gaussian(cfg.n, sigma2, &mut noise_rng))
    })?;
    Ok(MeasurementSet { chain: Chain::EndToEnd, b, operators, noise_seed })
}

fn proxy_core(
    channels: &[StackedChannel],
    plan: &SubChannelPlan,
    cfg: &SystemConfig,
    dft: &Arc<DftOperator>,
    mut noise: impl FnMut(usize, usize) -> Option<Vec<C64>>,
) -> Result<(Vec<Vec<Vec<C64>>>, OperatorGrid)> {
    check_shapes(channels, plan, cfg)?;
    let operators = plan_operators(dft, plan)?;
    let mut b = Vec::with_capacity(cfg.c);
    for (j, (ch, ops)) in channels.iter().zip(&operators).enumerate() {
        let mut row = Vec::with_capacity(cfg.t);
        for (i, op) in ops.iter().enumerate().take(cfg.t) {
            let mut v = if ch.is_empty() { vec![C64::new(0.0, 0.0); cfg.n] } else { padded(&ch.slot(i), cfg.n) };
            if let Some(z) = noise(j, i) {
                for (a, zz) in v.iter_mut().zip(z) {
                    *a += zz;
                }
            }
            row.push(op.apply(&v)?);
        }
        b.push(row);
    }
    Ok((b, operators))
}

/// `b_j^i = A_j^i (h_j^i + z_j^i)` with `z_j^i ~ CN(0, (σ² m/n²) I_n)`
/// independent over `(j, i)`.
pub fn transmit_receive_proxy(
    channels: &[StackedChannel],
    plan: &SubChannelPlan,
    cfg: &SystemConfig,
    dft: &Arc<DftOperator>,
    rng: &mut impl Rng,
) -> Result<MeasurementSet> {
    let noise_seed: u64 = rng.random();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let variance = cfg.sigma2 * cfg.m as f64 / (cfg.n as f64).powi(2);
    let (b, operators) = proxy_core(channels, plan, cfg, dft, |_, _| {
        (variance > 0.0).then(|| complex_gaussian(cfg.n, variance, &mut noise_rng))
    })?;
    Ok(MeasurementSet { chain: Chain::Proxy, b, operators, noise_seed })
}

/// Runs the chain selected by `cfg.chain`.
pub fn transmit_receive(
    channels: &[StackedChannel],
    plan: &SubChannelPlan,
    cfg: &SystemConfig,
    dft: &Arc<DftOperator>,
    rng: &mut impl Rng,
) -> Result<MeasurementSet> {
    match cfg.chain {
        Chain::Proxy => transmit_receive_proxy(channels, plan, cfg, dft, rng),
        Chain::EndToEnd => {
            let bank = PilotBank::new(dft, plan, cfg)?;
            transmit_receive_endtoend(channels, plan, &bank, cfg, dft, rng)
        }
    }
}

/// Runs both chains on the same time-domain noise and returns
/// `max_{j,i} ‖b_e2e − b_proxy‖ / ‖b_proxy‖`.
///
/// The proxy sees `z_j^i = (√m/n) Φ* diag(φ̄_j) Φ e^i`, which is `(√m/n) e^i`
/// for unit pilot phases. Sub-channels whose proxy output vanishes are measured
/// against the largest proxy norm over all `(j, i)`; if everything vanishes the
/// absolute deviation is returned.
pub fn chain_equivalence_check(
    channels: &[StackedChannel],
    plan: &SubChannelPlan,
    bank: &PilotBank,
    cfg: &SystemConfig,
    noise_seed: u64,
) -> Result<f64> {
    let dft = Arc::new(DftOperator::new(cfg.n)?);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let e: Vec<Vec<C64>> = (0..cfg.t)
        .map(|_| {
            if cfg.sigma2 > 0.0 {
                complex_gaussian(cfg.n, cfg.sigma2, &mut rng)
            } else {
                vec![C64::new(0.0, 0.0); cfg.n]
            }
        })
        .collect();
    let (b_e2e, _) = endtoend_core(channels, plan, bank, cfg, &dft, |i| Some(e[i].clone()))?;
    let scale = (cfg.m as f64).sqrt() / cfg.n as f64;
    let (b_proxy, _) = proxy_core(channels, plan, cfg, &dft, |j, i| {
        let family = bank.family(j, i);
        let mut spectrum = dft.forward(&e[i]).ok()?;
        for (&p, ph) in family.support().iter().zip(family.phases()) {
            spectrum[p] *= ph.conj();
        }
        let mut z = dft.inverse(&spectrum).ok()?;
        z.iter_mut().for_each(|x| *x *= scale);
        Some(z)
    })?;

    let mut max_norm: f64 = 0.0;
    for row in &b_proxy {
        for b in row {
            max_norm = max_norm.max(crate::norm(b));
        }
    }
    let mut worst: f64 = 0.0;
    for (re, rp) in b_e2e.iter().zip(&b_proxy) {
        for (be, bp) in re.iter().zip(rp) {
            let diff: Vec<C64> = be.iter().zip(bp).map(|(x, y)| x - y).collect();
            let reference = crate::norm(bp);
            let denom = if reference > 0.0 {
                reference
            } else if max_norm > 0.0 {
                max_norm
            } else {
                1.0
            };
            worst = worst.max(crate::norm(&diff) / denom);
        }
    }
    Ok(worst)
}

/// Signal-to-noise ratios in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrPair {
    /// `10 log₁₀(1/σ²)`.
    pub system_db: f64,
    /// System SNR minus `10 log₁₀(n/m)`.
    pub true_db: f64,
}

/// `σ² = 0` maps to `+∞` for both values.
pub fn snr_conversions(sigma2: f64, n: usize, m: usize) -> SnrPair {
    if sigma2 <= 0.0 {
        return SnrPair { system_db: f64::INFINITY, true_db: f64::INFINITY };
    }
    let system_db = -10.0 * sigma2.log10();
    SnrPair { system_db, true_db: system_db - 10.0 * (n as f64 / m as f64).log10() }
}

/// Inverse of the system SNR convention.
pub fn sigma2_from_snr_db(snr_db: f64) -> f64 {
    if snr_db.is_infinite() && snr_db > 0.0 {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}
