//! System configuration and random traffic: sub-channel plans, user
//! assignments, sparse channel impulse responses (CIRs), data symbols and the
//! resulting effective channels per sub-channel.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::pilots::PhasePolicy;
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PlanMode {
    /// One partition reused in every slot.
    #[default]
    Fixed,
    /// A fresh partition per slot.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DataAlphabet {
    Bpsk,
    #[default]
    Qpsk,
}

impl DataAlphabet {
    pub fn points(self) -> &'static [C64] {
        const BPSK: [C64; 2] = [C64::new(1.0, 0.0), C64::new(-1.0, 0.0)];
        const QPSK: [C64; 4] = [C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(-1.0, 0.0), C64::new(0.0, -1.0)];
        match self {
            DataAlphabet::Bpsk => &BPSK,
            DataAlphabet::Qpsk => &QPSK,
        }
    }

    /// Nearest alphabet point.
    pub fn decide(self, z: C64) -> C64 {
        *self
            .points()
            .iter()
            .min_by(|a, b| (*a - z).norm_sqr().total_cmp(&(*b - z).norm_sqr()))
            .expect("alphabet is nonempty")
    }
}

/// How nonzero CIR taps are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CirPolicy {
    /// Every nonzero tap has modulus `1/√k_s`, so `‖h'‖² = 1`.
    #[default]
    FineGrained,
    /// Gaussian taps rescaled to a squared norm uniform in `[3/4, 5/4]`.
    NormOnly,
}

/// How users are spread over sub-channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// Independent uniform sub-channel per user.
    #[default]
    Uniform,
    /// User `k` goes to sub-channel `k mod c`; pilots stay uniform.
    Homogeneous,
}

/// Which receive chain produces the measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Chain {
    #[default]
    Proxy,
    EndToEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n: usize,
    pub m: usize,
    pub c: usize,
    pub r: usize,
    pub s: usize,
    pub k_s: usize,
    pub t: usize,
    pub u: usize,
    pub sigma2: f64,
    #[serde(default)]
    pub plan_mode: PlanMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data_alphabet: DataAlphabet,
    #[serde(default)]
    pub cir_policy: CirPolicy,
    #[serde(default)]
    pub placement: Placement,
    #[serde(default)]
    pub chain: Chain,
    #[serde(default = "default_phase_policy")]
    pub phase_policy: PhasePolicy,
}

fn default_phase_policy() -> PhasePolicy {
    PhasePolicy::Unit
}

impl SystemConfig {
    /// A configuration with `c = n/m`, `r = n/s` and library defaults elsewhere.
    pub fn new(n: usize, m: usize, s: usize, k_s: usize, t: usize, u: usize, sigma2: f64) -> Self {
        Self {
            n,
            m,
            c: n.checked_div(m).unwrap_or(0),
            r: n.checked_div(s).unwrap_or(0),
            s,
            k_s,
            t,
            u,
            sigma2,
            plan_mode: PlanMode::Fixed,
            seed: 0,
            data_alphabet: DataAlphabet::Qpsk,
            cir_policy: CirPolicy::FineGrained,
            placement: Placement::Uniform,
            chain: Chain::Proxy,
            phase_policy: PhasePolicy::Unit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n == 0 || self.m == 0 || self.c == 0 {
            return fail("n, m and c must be positive".into());
        }
        if self.m * self.c != self.n {
            return fail(format!("m*c must equal n ({}*{} != {})", self.m, self.c, self.n));
        }
        if self.r == 0 || self.s == 0 {
            return fail("r and s must be positive".into());
        }
        if self.r * self.s > self.n {
            return fail(format!("r*s must not exceed n ({}*{} > {})", self.r, self.s, self.n));
        }
        if self.k_s == 0 || self.k_s > self.s {
            return fail(format!("k_s must satisfy 1 <= k_s <= s (k_s = {}, s = {})", self.k_s, self.s));
        }
        if self.t == 0 {
            return fail("t must be at least 1".into());
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return fail(format!("sigma2 must be finite and >= 0 (got {})", self.sigma2));
        }
        Ok(())
    }

    /// Length `r·s` of the stacked effective channel of one sub-channel.
    pub fn active_columns(&self) -> usize {
        self.r * self.s
    }
}

/// Per slot partition of the `n` carriers into `c` blocks of size `m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubChannelPlan {
    mode: PlanMode,
    t: usize,
    partitions: Vec<Vec<Vec<usize>>>,
}

impl SubChannelPlan {
    /// Builds a plan from explicit partitions (one for fixed mode, `t` otherwise).
    pub fn from_partitions(mode: PlanMode, t: usize, partitions: Vec<Vec<Vec<usize>>>) -> Self {
        Self { mode, t, partitions }
    }

    pub fn mode(&self) -> PlanMode {
        self.mode
    }

    pub fn slots(&self) -> usize {
        self.t
    }

    pub fn channels(&self) -> usize {
        self.partitions.first().map_or(0, Vec::len)
    }

    /// Carrier set `B_j^i`, ascending.
    pub fn rows(&self, channel: usize, slot: usize) -> &[usize] {
        let part = match self.mode {
            PlanMode::Fixed => &self.partitions[0],
            PlanMode::Independent => &self.partitions[slot],
        };
        &part[channel]
    }

    /// Sub-channel owning carrier `p` in `slot`.
    pub fn owner_map(&self, slot: usize, n: usize) -> Vec<usize> {
        let mut owner = vec![usize::MAX; n];
        for j in 0..self.channels() {
            for &p in self.rows(j, slot) {
                owner[p] = j;
            }
        }
        owner
    }
}

fn random_partition(n: usize, m: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm.chunks(m)
        .map(|chunk| {
            let mut block = chunk.to_vec();
            block.sort_unstable();
            block
        })
        .collect()
}

/// Uniform random partitions realized as a shuffled `[n]` cut into chunks of `m`.
pub fn draw_subchannel_plan(cfg: &SystemConfig, rng: &mut impl Rng) -> SubChannelPlan {
    let count = match cfg.plan_mode {
        PlanMode::Fixed => 1,
        PlanMode::Independent => cfg.t,
    };
    let partitions = (0..count).map(|_| random_partition(cfg.n, cfg.m, rng)).collect();
    SubChannelPlan { mode: cfg.plan_mode, t: cfg.t, partitions }
}

/// `(sub-channel, pilot)` per user, fixed for all slots.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UserAssignment {
    entries: Vec<(usize, usize)>,
}

impl UserAssignment {
    pub fn new(entries: Vec<(usize, usize)>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sub_channel(&self, user: usize) -> usize {
        self.entries[user].0
    }

    pub fn pilot(&self, user: usize) -> usize {
        self.entries[user].1
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    /// Users per `(pilot → users)` for one sub-channel.
    pub fn pilot_map(&self, channel: usize) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (k, &(j, l)) in self.entries.iter().enumerate() {
            if j == channel {
                map.entry(l).or_default().push(k);
            }
        }
        map
    }
}

/// `u` independent uniform draws from `[c] × [r]`, or round-robin sub-channels
/// under [`Placement::Homogeneous`].
pub fn assign_users(cfg: &SystemConfig, rng: &mut impl Rng) -> UserAssignment {
    let entries = (0..cfg.u)
        .map(|k| {
            let j = match cfg.placement {
                Placement::Uniform => rng.random_range(0..cfg.c),
                Placement::Homogeneous => k % cfg.c,
            };
            (j, rng.random_range(0..cfg.r))
        })
        .collect();
    UserAssignment { entries }
}

/// A length-`s` channel impulse response.
#[derive(Debug, Clone, PartialEq)]
pub struct Cir {
    pub taps: Vec<C64>,
    /// Nonzero tap positions, ascending.
    pub support: Vec<usize>,
}

impl Cir {
    pub fn energy(&self) -> f64 {
        crate::norm_sqr(&self.taps)
    }
}

pub fn draw_cir(s: usize, k_s: usize, policy: CirPolicy, rng: &mut impl Rng) -> Cir {
    let mut support = index::sample(rng, s, k_s).into_vec();
    support.sort_unstable();
    let mut taps = vec![C64::new(0.0, 0.0); s];
    match policy {
        CirPolicy::FineGrained => {
            let amplitude = 1.0 / (k_s as f64).sqrt();
            for &q in &support {
                taps[q] = C64::from_polar(amplitude, rng.random_range(0.0..2.0 * PI));
            }
        }
        CirPolicy::NormOnly => {
            loop {
                for &q in &support {
                    let re: f64 = StandardNormal.sample(rng);
                    let im: f64 = StandardNormal.sample(rng);
                    taps[q] = C64::new(re, im);
                }
                if crate::norm_sqr(&taps) > 1e-12 {
                    break;
                }
            }
            let target = rng.random_range(0.75..=1.25);
            let scale = (target / crate::norm_sqr(&taps)).sqrt();
            for z in taps.iter_mut() {
                *z *= scale;
            }
        }
    }
    Cir { taps, support }
}

pub fn draw_cirs(cfg: &SystemConfig, rng: &mut impl Rng) -> Vec<Cir> {
    (0..cfg.u).map(|_| draw_cir(cfg.s, cfg.k_s, cfg.cir_policy, rng)).collect()
}

/// `d_k^i` for `k ∈ [u]`, `i ∈ [t]`, with `d_k^0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    alphabet: DataAlphabet,
    rows: Vec<Vec<C64>>,
}

impl DataMatrix {
    pub fn new(alphabet: DataAlphabet, rows: Vec<Vec<C64>>) -> Self {
        Self { alphabet, rows }
    }

    pub fn alphabet(&self) -> DataAlphabet {
        self.alphabet
    }

    pub fn user(&self, k: usize) -> &[C64] {
        &self.rows[k]
    }

    pub fn get(&self, k: usize, slot: usize) -> C64 {
        self.rows[k][slot]
    }
}

pub fn draw_data(cfg: &SystemConfig, rng: &mut impl Rng) -> DataMatrix {
    let points = cfg.data_alphabet.points();
    let rows = (0..cfg.u)
        .map(|_| {
            (0..cfg.t)
                .map(|i| if i == 0 { C64::new(1.0, 0.0) } else { points[rng.random_range(0..points.len())] })
                .collect()
        })
        .collect();
    DataMatrix { alphabet: cfg.data_alphabet, rows }
}

/// One user's share of a block of the stacked channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub block: usize,
    pub user: usize,
    pub taps: Vec<C64>,
    pub data: Vec<C64>,
}

/// Effective channels `h_j^i ∈ ℂ^{rs}` of one sub-channel for all slots, kept
/// as the list of user contributions; block `ℓ` of slot `i` is
/// `Σ_{k ↪ (j,ℓ)} d_k^i h'_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedChannel {
    pub sub_channel: usize,
    pub r: usize,
    pub s: usize,
    pub t: usize,
    pub contributions: Vec<Contribution>,
}

impl StackedChannel {
    pub fn len(&self) -> usize {
        self.r * self.s
    }

    pub fn is_empty(&self) -> bool {
        self.contributions.is_empty()
    }

    /// Dense `h_j^i`.
    pub fn slot(&self, i: usize) -> Vec<C64> {
        let mut h = vec![C64::new(0.0, 0.0); self.len()];
        for c in &self.contributions {
            let d = c.data[i];
            for (q, &tap) in c.taps.iter().enumerate() {
                h[c.block * self.s + q] += d * tap;
            }
        }
        h
    }

    /// Slot-0 channel `h_j`.
    pub fn pure(&self) -> Vec<C64> {
        self.slot(0)
    }

    /// Blocks with at least one user, ascending.
    pub fn active_blocks(&self) -> Vec<usize> {
        let mut blocks: Vec<usize> = self.contributions.iter().map(|c| c.block).collect();
        blocks.dedup();
        blocks
    }

    /// Union of the users' tap supports, as flattened indices `ℓ s + q`.
    pub fn support(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .contributions
            .iter()
            .flat_map(|c| {
                c.taps.iter().enumerate().filter(|(_, z)| z.norm_sqr() > 0.0).map(move |(q, _)| c.block * self.s + q)
            })
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    pub fn users_in_block(&self, block: usize) -> Vec<usize> {
        self.contributions.iter().filter(|c| c.block == block).map(|c| c.user).collect()
    }
}

pub fn effective_channels(
    assignment: &UserAssignment,
    cirs: &[Cir],
    data: &DataMatrix,
    cfg: &SystemConfig,
) -> Vec<StackedChannel> {
    let mut channels: Vec<StackedChannel> = (0..cfg.c)
        .map(|j| StackedChannel { sub_channel: j, r: cfg.r, s: cfg.s, t: cfg.t, contributions: Vec::new() })
        .collect();
    for (k, &(j, l)) in assignment.entries().iter().enumerate() {
        channels[j].contributions.push(Contribution {
            block: l,
            user: k,
            taps: cirs[k].taps.clone(),
            data: data.user(k).to_vec(),
        });
    }
    for ch in channels.iter_mut() {
        ch.contributions.sort_by_key(|c| (c.block, c.user));
    }
    channels
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ChannelCensus {
    pub users: usize,
    /// Pilots chosen by two or more users.
    pub collisions: usize,
    /// Users whose pilot nobody else in the sub-channel picked.
    pub collision_free: usize,
}

pub fn collision_census(assignment: &UserAssignment, cfg: &SystemConfig) -> Vec<ChannelCensus> {
    let mut counts: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); cfg.c];
    for &(j, l) in assignment.entries() {
        *counts[j].entry(l).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .map(|pilots| ChannelCensus {
            users: pilots.values().sum(),
            collisions: pilots.values().filter(|&&n| n >= 2).count(),
            collision_free: pilots.values().filter(|&&n| n == 1).count(),
        })
        .collect()
}
