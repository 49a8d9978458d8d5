//! Hierarchical sparsity: supports, best `(k_u, k_s)` projection of a family of
//! `t` vectors sharing one support, and a brute-force oracle.
//!
//! Vectors are flat `ℂ^{rs}` slices viewed as `r` blocks of length `s`; entry
//! `(k, ℓ)` lives at `k·s + ℓ`.

use serde::Serialize;

use crate::{Error, Result, C64};

/// Candidate supports enumerated by [`exhaustive_project`] before it gives up.
pub const EXHAUSTIVE_LIMIT: u128 = 5_000_000;

/// Active blocks with their in-block index sets, both ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct HiSupport {
    pub r: usize,
    pub s: usize,
    pub blocks: Vec<(usize, Vec<usize>)>,
}

impl HiSupport {
    pub fn new(r: usize, s: usize, mut blocks: Vec<(usize, Vec<usize>)>) -> Result<Self> {
        blocks.sort_by_key(|b| b.0);
        for w in blocks.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::DuplicateIndex(w[0].0));
            }
        }
        for (k, omega) in blocks.iter_mut() {
            if *k >= r {
                return Err(Error::IndexOutOfRange { index: *k, bound: r });
            }
            crate::spectral::validate_index_set(omega, s)?;
            omega.sort_unstable();
        }
        Ok(Self { r, s, blocks })
    }

    pub fn empty(r: usize, s: usize) -> Self {
        Self { r, s, blocks: Vec::new() }
    }

    /// Exact support of a family: every entry nonzero in some slot.
    pub fn of_family(family: &[Vec<C64>], s: usize) -> Self {
        let len = family.first().map_or(0, Vec::len);
        let r = len / s;
        let blocks = (0..r)
            .filter_map(|k| {
                let omega: Vec<usize> =
                    (0..s).filter(|&l| family.iter().any(|v| v[k * s + l] != C64::new(0.0, 0.0))).collect();
                (!omega.is_empty()).then_some((k, omega))
            })
            .collect();
        Self { r, s, blocks }
    }

    pub fn block_indices(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.0).collect()
    }

    pub fn omega(&self, block: usize) -> Option<&[usize]> {
        self.blocks.iter().find(|b| b.0 == block).map(|b| b.1.as_slice())
    }

    /// Flattened `Ω` as indices `k·s + ℓ`, ascending.
    pub fn flatten(&self) -> Vec<usize> {
        self.blocks.iter().flat_map(|(k, omega)| omega.iter().map(move |&l| k * self.s + l)).collect()
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.1.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn is_within(&self, k_u: usize, k_s: usize) -> bool {
        self.blocks.len() <= k_u && self.blocks.iter().all(|b| b.1.len() <= k_s)
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.omega(idx / self.s).is_some_and(|o| o.contains(&(idx % self.s)))
    }

    /// `v` with everything outside `Ω` zeroed.
    pub fn restrict(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); v.len()];
        for idx in self.flatten() {
            out[idx] = v[idx];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockScore {
    /// Top-`k_s` entries by cross-slot energy, ascending.
    pub omega: Vec<usize>,
    pub score: f64,
}

fn check_family(family: &[Vec<C64>], s: usize) -> Result<usize> {
    if s == 0 {
        return Err(Error::InvalidArgument("block length s must be positive".into()));
    }
    let len = family.first().map_or(0, Vec::len);
    if !len.is_multiple_of(s) {
        return Err(Error::InvalidArgument(format!("vector length {len} is not a multiple of s = {s}")));
    }
    for v in family {
        crate::spectral::check_len(len, v.len())?;
    }
    Ok(len / s)
}

fn entry_energies(family: &[Vec<C64>], len: usize) -> Vec<f64> {
    let mut e = vec![0.0; len];
    for v in family {
        for (acc, z) in e.iter_mut().zip(v) {
            *acc += z.norm_sqr();
        }
    }
    e
}

/// Indices of the `k` largest values, larger first, lower index on ties.
fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn block_scores(family: &[Vec<C64>], s: usize, k_s: usize) -> Result<Vec<BlockScore>> {
    let r = check_family(family, s)?;
    let e = entry_energies(family, r * s);
    Ok((0..r)
        .map(|k| {
            let block = &e[k * s..(k + 1) * s];
            let mut omega = top_k(block, k_s.min(s));
            let score = omega.iter().map(|&l| block[l]).sum();
            omega.sort_unstable();
            BlockScore { omega, score }
        })
        .collect())
}

/// Up to `k_u` blocks with the largest scores strictly above `threshold`,
/// largest first.
pub fn select_blocks(scores: &[f64], k_u: usize, threshold: f64) -> Vec<usize> {
    top_k(scores, scores.len()).into_iter().filter(|&k| scores[k] > threshold).take(k_u).collect()
}

pub fn hi_project(family: &[Vec<C64>], s: usize, k_u: usize, k_s: usize, threshold: f64) -> Result<HiSupport> {
    let scores = block_scores(family, s, k_s)?;
    let values: Vec<f64> = scores.iter().map(|b| b.score).collect();
    let chosen = select_blocks(&values, k_u, threshold);
    let blocks = chosen.into_iter().map(|k| (k, scores[k].omega.clone())).collect();
    HiSupport::new(values.len(), s, blocks)
}

/// `Σ_i ‖v^i − v^i|_Ω‖²`, summed over excluded entries in index order.
pub fn approximation_error(family: &[Vec<C64>], support: &HiSupport) -> f64 {
    let len = family.first().map_or(0, Vec::len);
    let e = entry_energies(family, len);
    (0..len).filter(|&idx| !support.contains(idx)).map(|idx| e[idx]).sum()
}

fn subsets_up_to(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..k.min(n) {
        let mut next = Vec::new();
        for set in &frontier {
            let start = set.last().map_or(0, |&x| x + 1);
            for x in start..n {
                let mut grown: Vec<usize> = set.clone();
                grown.push(x);
                next.push(grown);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k as u128).fold(1, |acc, i| acc * (n as u128 - i) / (i + 1))
}

/// Brute force over every support with at most `k_u` blocks of at most `k_s`
/// entries; returns the first minimizer in enumeration order.
pub fn exhaustive_project(family: &[Vec<C64>], s: usize, k_u: usize, k_s: usize) -> Result<HiSupport> {
    let r = check_family(family, s)?;
    let omegas: Vec<Vec<usize>> = subsets_up_to(s, k_s).into_iter().filter(|o| !o.is_empty()).collect();
    let per_block = omegas.len() as u128;
    let count: u128 = (0..=k_u.min(r))
        .map(|j| binomial(r, j).saturating_mul(per_block.saturating_pow(j as u32)))
        .fold(0u128, u128::saturating_add);
    if count > EXHAUSTIVE_LIMIT {
        return Err(Error::InstanceTooLarge(format!(
            "{count} candidate supports for r = {r}, s = {s}, k_u = {k_u}, k_s = {k_s}"
        )));
    }
    let mut best = HiSupport::empty(r, s);
    let mut best_err = approximation_error(family, &best);
    for blocks in subsets_up_to(r, k_u) {
        let mut choice = vec![0usize; blocks.len()];
        loop {
            let cand =
                HiSupport { r, s, blocks: blocks.iter().zip(&choice).map(|(&k, &c)| (k, omegas[c].clone())).collect() };
            let err = approximation_error(family, &cand);
            if err < best_err {
                best_err = err;
                best = cand;
            }
            // Odometer over per-block choices.
            let mut pos = 0;
            while pos < choice.len() {
                choice[pos] += 1;
                if choice[pos] < omegas.len() {
                    break;
                }
                choice[pos] = 0;
                pos += 1;
            }
            if pos == choice.len() {
                break;
            }
        }
    }
    Ok(best)
}
