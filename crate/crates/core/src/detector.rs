//! Per sub-channel receiver: back-projection, hierarchical support detection
//! across slots, restricted least squares and quotient demodulation.

use std::sync::Arc;

use log::debug;
use nalgebra::{DMatrix, DVector, Dyn, QR};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::airlink::MeasurementSet;
use crate::hisparse::{block_scores, hi_project, HiSupport};
use crate::spectral::{coherence, SubsampledDft, RANK_TOLERANCE};
use crate::traffic::DataAlphabet;
use crate::{Error, Result, C64};

/// Reference entries below this modulus are not divided by.
pub const QUOTIENT_FLOOR: f64 = 1e-12;

/// Ratio of the threshold to the mean selected block score under
/// [`Threshold::Auto`].
/// Minimum explained variance for the 2-means split to count as real;
/// the best split of a Gaussian explains about 0.64.
pub const MIN_SEPARATION: f64 = 0.8;
pub const AUTO_THRESHOLD_FACTOR: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockBudget {
    Fixed(usize),
    /// Cluster block norms to guess the number of active blocks.
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Fixed(f64),
    /// `0.3 × (sum of the top-k_u block scores) / k_u`.
    Auto,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NumberOrWord {
    Int(u64),
    Float(f64),
    Word(String),
}

impl Serialize for BlockBudget {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BlockBudget::Fixed(k) => ser.serialize_u64(*k as u64),
            BlockBudget::Estimate => ser.serialize_str("estimate"),
        }
    }
}

impl<'de> Deserialize<'de> for BlockBudget {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        match NumberOrWord::deserialize(de)? {
            NumberOrWord::Int(k) => Ok(BlockBudget::Fixed(k as usize)),
            NumberOrWord::Word(w) if w == "estimate" => Ok(BlockBudget::Estimate),
            _ => Err(serde::de::Error::custom("k_u must be a positive integer or \"estimate\"")),
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Fixed(v) => ser.serialize_f64(*v),
            Threshold::Auto => ser.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        match NumberOrWord::deserialize(de)? {
            NumberOrWord::Int(v) => Ok(Threshold::Fixed(v as f64)),
            NumberOrWord::Float(v) => Ok(Threshold::Fixed(v)),
            NumberOrWord::Word(w) if w == "auto" => Ok(Threshold::Auto),
            _ => Err(serde::de::Error::custom("threshold must be a number >= 0 or \"auto\"")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorParams {
    pub k_u: BlockBudget,
    pub k_s: usize,
    #[serde(default = "default_threshold")]
    pub threshold: Threshold,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Relative singular value cutoff of the restricted solve.
    #[serde(default = "default_lsq_tolerance")]
    pub lsq_tolerance: f64,
}

fn default_threshold() -> Threshold {
    Threshold::Auto
}

fn default_iterations() -> usize {
    1
}

fn default_lsq_tolerance() -> f64 {
    RANK_TOLERANCE
}

impl DetectorParams {
    pub fn new(k_u: BlockBudget, k_s: usize) -> Self {
        Self { k_u, k_s, threshold: Threshold::Auto, iterations: 1, lsq_tolerance: RANK_TOLERANCE }
    }

    pub fn validate(&self, r: usize, s: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if let BlockBudget::Fixed(k) = self.k_u {
            if k == 0 || k > r {
                return fail(format!("detector k_u must satisfy 1 <= k_u <= r (k_u = {k}, r = {r})"));
            }
        }
        if self.k_s == 0 || self.k_s > s {
            return fail(format!("detector k_s must satisfy 1 <= k_s <= s (k_s = {}, s = {s})", self.k_s));
        }
        if let Threshold::Fixed(v) = self.threshold {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("threshold must be finite and >= 0 (got {v})"));
            }
        }
        if self.iterations == 0 {
            return fail("iterations must be at least 1".into());
        }
        if !(self.lsq_tolerance > 0.0 && self.lsq_tolerance < 1.0) {
            return fail(format!("lsq_tolerance must lie in (0, 1) (got {})", self.lsq_tolerance));
        }
        Ok(())
    }
}

/// `(A^i)* b^i` restricted to the leading `n_cols` columns, per slot.
pub fn back_project(b: &[Vec<C64>], ops: &[Arc<SubsampledDft>], n_cols: usize) -> Result<Vec<Vec<C64>>> {
    crate::spectral::check_len(b.len(), ops.len())?;
    b.iter().zip(ops).map(|(bi, op)| op.adjoint(bi, n_cols)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetEstimate {
    pub k_u: usize,
    /// Blocks in the high cluster, ascending.
    pub active: Vec<usize>,
    pub norms: Vec<f64>,
}

/// Splits scalars into a low and a high cluster by 1-D 2-means started at the
/// extremes. Returns the membership of the high cluster.
pub fn two_means(values: &[f64]) -> Vec<bool> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || lo == hi {
        let all_active = values.first().is_some_and(|&v| v != 0.0);
        return vec![all_active; values.len()];
    }
    let (mut c_lo, mut c_hi) = (lo, hi);
    let mut high: Vec<bool> = Vec::new();
    for _ in 0..100 {
        let next: Vec<bool> = values.iter().map(|&v| (v - c_hi).abs() < (v - c_lo).abs()).collect();
        if next == high {
            break;
        }
        high = next;
        let mean = |want: bool| {
            let (sum, count) = values
                .iter()
                .zip(&high)
                .filter(|(_, &h)| h == want)
                .fold((0.0, 0usize), |(s, c), (&v, _)| (s + v, c + 1));
            (count > 0).then(|| sum / count as f64)
        };
        c_lo = mean(false).unwrap_or(c_lo);
        c_hi = mean(true).unwrap_or(c_hi);
    }
    high
}

/// Share of the variance of `values` explained by the two-cluster split.
pub fn explained_variance(values: &[f64], high: &[bool]) -> f64 {
    let mean = |sel: &dyn Fn(usize) -> bool| {
        let (sum, count) =
            (0..values.len()).filter(|&k| sel(k)).fold((0.0, 0usize), |(s, c), k| (s + values[k], c + 1));
        if count > 0 {
            sum / count as f64
        } else {
            0.0
        }
    };
    let total = mean(&|_| true);
    let (m_hi, m_lo) = (mean(&|k| high[k]), mean(&|k| !high[k]));
    let tss: f64 = values.iter().map(|v| (v - total).powi(2)).sum();
    if tss == 0.0 {
        return 0.0;
    }
    let wss: f64 = values.iter().zip(high).map(|(v, &h)| (v - if h { m_hi } else { m_lo }).powi(2)).sum();
    1.0 - wss / tss
}

/// Block norms after keeping each block's top-`k_s` entries (energies summed
/// over slots), clustered into two groups.
pub fn estimate_block_budget(back_projections: &[Vec<C64>], s: usize, k_s: usize) -> Result<BudgetEstimate> {
    if back_projections.is_empty() {
        return Err(Error::InvalidArgument("need at least one slot".into()));
    }
    let norms: Vec<f64> = block_scores(back_projections, s, k_s)?.iter().map(|b| b.score.sqrt()).collect();
    let high = two_means(&norms);
    let split = high.iter().any(|&h| h) && high.iter().any(|&h| !h);
    if split && explained_variance(&norms, &high) < MIN_SEPARATION {
        return Ok(BudgetEstimate { k_u: 0, active: Vec::new(), norms });
    }
    let active: Vec<usize> = (0..norms.len()).filter(|&k| high[k]).collect();
    Ok(BudgetEstimate { k_u: active.len(), active, norms })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportDecision {
    pub support: HiSupport,
    pub k_u: usize,
    pub threshold: f64,
    pub scores: Vec<f64>,
}

pub fn detect_support(back_projections: &[Vec<C64>], s: usize, params: &DetectorParams) -> Result<SupportDecision> {
    let k_u = match params.k_u {
        BlockBudget::Fixed(k) => k,
        BlockBudget::Estimate => estimate_block_budget(back_projections, s, params.k_s)?.k_u,
    };
    let scores: Vec<f64> = block_scores(back_projections, s, params.k_s)?.iter().map(|b| b.score).collect();
    let threshold = match params.threshold {
        Threshold::Fixed(v) => v,
        Threshold::Auto if k_u == 0 => 0.0,
        Threshold::Auto => {
            let mut sorted = scores.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let top: f64 = sorted.iter().take(k_u).sum();
            AUTO_THRESHOLD_FACTOR * top / k_u as f64
        }
    };
    let support = hi_project(back_projections, s, k_u, params.k_s, threshold)?;
    Ok(SupportDecision { support, k_u, threshold, scores })
}

/// Restricted least squares on a fixed `(A, Ω)`. `A_Ω = QR` is factored once
/// and reused for every right-hand side.
#[derive(Debug, Clone)]
pub struct RestrictedSolver {
    omega: Vec<usize>,
    n_cols: usize,
    matrix: DMatrix<C64>,
    qr: Option<QR<C64, Dyn, Dyn>>,
    r: DMatrix<C64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqSolution {
    /// Length `n_cols`, zero off `Ω`.
    pub h: Vec<C64>,
    pub residual: f64,
}

impl RestrictedSolver {
    /// Fails with `DegenerateSupport` when `|Ω| > m` or when the smallest
    /// diagonal entry of `R` falls below `tolerance` times the largest.
    pub fn new(op: &SubsampledDft, omega: &[usize], n_cols: usize, tolerance: f64) -> Result<Self> {
        crate::spectral::validate_index_set(omega, n_cols)?;
        let matrix = op.submatrix(omega);
        if omega.is_empty() {
            return Ok(Self { omega: Vec::new(), n_cols, matrix, qr: None, r: DMatrix::zeros(0, 0) });
        }
        if omega.len() > op.m() {
            return Err(Error::DegenerateSupport { smallest: 0.0, largest: 1.0 });
        }
        let qr = matrix.clone().qr();
        let r = qr.r();
        let diag: Vec<f64> = r.diagonal().iter().map(|x| x.norm()).collect();
        let largest = diag.iter().copied().fold(0.0, f64::max);
        let smallest = diag.iter().copied().fold(f64::INFINITY, f64::min);
        if largest == 0.0 || smallest < tolerance * largest {
            return Err(Error::DegenerateSupport { smallest, largest });
        }
        Ok(Self { omega: omega.to_vec(), n_cols, matrix, qr: Some(qr), r })
    }

    pub fn solve(&self, b: &[C64]) -> Result<LsqSolution> {
        crate::spectral::check_len(self.matrix.nrows(), b.len())?;
        let mut h = vec![C64::new(0.0, 0.0); self.n_cols];
        let Some(qr) = &self.qr else {
            return Ok(LsqSolution { h, residual: crate::norm(b) });
        };
        let bv = DVector::from_column_slice(b);
        let mut y = bv.clone();
        qr.q_tr_mul(&mut y);
        let k = self.omega.len();
        let x = self
            .r
            .solve_upper_triangular(&y.rows(0, k).into_owned())
            .ok_or(Error::DegenerateSupport { smallest: 0.0, largest: 1.0 })?;
        let residual = (&bv - &self.matrix * &x).norm();
        for (&q, &v) in self.omega.iter().zip(x.iter()) {
            h[q] = v;
        }
        Ok(LsqSolution { h, residual })
    }
}

/// `argmin ‖b − A h‖` over `h` supported on `Ω`.
pub fn restricted_lsq(b: &[C64], op: &SubsampledDft, omega: &[usize], n_cols: usize) -> Result<LsqSolution> {
    RestrictedSolver::new(op, omega, n_cols, RANK_TOLERANCE)?.solve(b)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockSymbols {
    pub block: usize,
    /// Fused quotient per slot; `None` marks an erasure.
    pub raw: Vec<Option<C64>>,
    /// Nearest alphabet point per slot.
    pub decisions: Vec<Option<C64>>,
}

/// Quotients `h*^i / h*^0` on each selected block, fused over the block's
/// entries with weights `|h*^0|²`.
pub fn demodulate(estimates: &[Vec<C64>], support: &HiSupport, alphabet: DataAlphabet) -> Vec<BlockSymbols> {
    let s = support.s;
    support
        .blocks
        .iter()
        .map(|(k, omega)| {
            let reference: Vec<(usize, C64)> = omega
                .iter()
                .map(|&l| (k * s + l, estimates[0][k * s + l]))
                .filter(|(_, z)| z.norm() > QUOTIENT_FLOOR)
                .collect();
            let weight: f64 = reference.iter().map(|(_, z)| z.norm_sqr()).sum();
            let raw: Vec<Option<C64>> = estimates
                .iter()
                .map(|h| {
                    (!reference.is_empty()).then(|| {
                        // Σ w (h^i/h^0) / Σ w with w = |h^0|² is Σ h^i conj(h^0) / Σ |h^0|².
                        reference.iter().map(|&(idx, h0)| h[idx] * h0.conj()).sum::<C64>() / weight
                    })
                })
                .collect();
            let decisions = raw.iter().map(|z| z.map(|z| alphabet.decide(z))).collect();
            BlockSymbols { block: *k, raw, decisions }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum LsqStatus {
    Solved,
    /// The restricted solve was not possible; estimates are the projected
    /// back-projection instead.
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub sub_channel: usize,
    pub decision: SupportDecision,
    /// `h*^i` per slot, zero off `Ω`.
    pub estimates: Vec<Vec<C64>>,
    pub residuals: Vec<f64>,
    pub lsq: LsqStatus,
    pub symbols: Vec<BlockSymbols>,
    /// Coherence of the slot-0 operator over the active columns.
    pub coherence: f64,
}

impl DetectionReport {
    pub fn support(&self) -> &HiSupport {
        &self.decision.support
    }
}

fn hi_iht(
    b: &[Vec<C64>],
    ops: &[Arc<SubsampledDft>],
    n_cols: usize,
    s: usize,
    params: &DetectorParams,
) -> Result<SupportDecision> {
    let mut v = back_project(b, ops, n_cols)?;
    let mut decision = detect_support(&v, s, params)?;
    for _ in 1..params.iterations {
        for ((vi, bi), op) in v.iter_mut().zip(b).zip(ops) {
            let x = decision.support.restrict(vi);
            let ax = op.apply_padded(&x)?;
            let resid: Vec<C64> = bi.iter().zip(&ax).map(|(p, q)| p - q).collect();
            let grad = op.adjoint(&resid, n_cols)?;
            *vi = x.iter().zip(&grad).map(|(p, q)| p + q).collect();
        }
        decision = detect_support(&v, s, params)?;
    }
    Ok(decision)
}

/// Full pipeline for one sub-channel's `t` measurements.
pub fn detect_channel(
    sub_channel: usize,
    b: &[Vec<C64>],
    ops: &[Arc<SubsampledDft>],
    r: usize,
    s: usize,
    params: &DetectorParams,
    alphabet: DataAlphabet,
) -> Result<DetectionReport> {
    params.validate(r, s)?;
    if b.is_empty() {
        return Err(Error::InvalidArgument("need at least one slot".into()));
    }
    let n_cols = r * s;
    let decision = hi_iht(b, ops, n_cols, s, params)?;
    let omega = decision.support.flatten();

    let mut solvers: Vec<(Arc<SubsampledDft>, RestrictedSolver)> = Vec::new();
    let mut solved = Vec::with_capacity(b.len());
    let mut failure = None;
    for (bi, op) in b.iter().zip(ops) {
        let solver = match solvers.iter().find(|(o, _)| Arc::ptr_eq(o, op)) {
            Some((_, sv)) => sv,
            None => match RestrictedSolver::new(op, &omega, n_cols, params.lsq_tolerance) {
                Ok(sv) => {
                    solvers.push((op.clone(), sv));
                    &solvers.last().expect("just pushed").1
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            },
        };
        solved.push(solver.solve(bi)?);
    }

    let (estimates, residuals, lsq) = match failure {
        None => {
            let residuals = solved.iter().map(|x| x.residual).collect();
            (solved.into_iter().map(|x| x.h).collect(), residuals, LsqStatus::Solved)
        }
        Some(reason) => {
            debug!("sub-channel {sub_channel}: restricted solve skipped ({reason})");
            let bp = back_project(b, ops, n_cols)?;
            let estimates: Vec<Vec<C64>> = bp.iter().map(|v| decision.support.restrict(v)).collect();
            let residuals = estimates
                .iter()
                .zip(b)
                .zip(ops)
                .map(|((h, bi), op)| {
                    let ah = op.apply_padded(h)?;
                    Ok(crate::norm(&bi.iter().zip(&ah).map(|(p, q)| p - q).collect::<Vec<_>>()))
                })
                .collect::<Result<Vec<f64>>>()?;
            (estimates, residuals, LsqStatus::Skipped(reason))
        }
    };
    let symbols = demodulate(&estimates, &decision.support, alphabet);
    Ok(DetectionReport {
        sub_channel,
        decision,
        estimates,
        residuals,
        lsq,
        symbols,
        coherence: coherence(&ops[0], Some(n_cols)),
    })
}

/// Runs [`detect_channel`] on every sub-channel in parallel.
pub fn run_detector(
    measurements: &MeasurementSet,
    params: &DetectorParams,
    r: usize,
    s: usize,
    alphabet: DataAlphabet,
) -> Result<Vec<DetectionReport>> {
    (0..measurements.channels())
        .into_par_iter()
        .map(|j| detect_channel(j, &measurements.b[j], &measurements.operators[j], r, s, params, alphabet))
        .collect()
}
