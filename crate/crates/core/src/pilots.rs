//! Flat-spectrum base pilots and their cyclic shifts.
//!
//! The base pilot of a sub-channel has DFT modulus `√(n/m)` on the sub-channel's
//! carriers and zero elsewhere. Pilot `ℓ` is the base pilot delayed by `ℓ s`
//! samples, so all `r` pilots share the spectral support and stacking their
//! `n × s` circulant blocks gives the full `n × n` circulant of the base pilot.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::spectral::{check_len, validate_index_set, DftOperator, Direction};
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PhasePolicy {
    /// All spectral phases equal to one.
    Unit,
    /// Independent uniform phases drawn from a seeded stream.
    SeededRandom { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct PilotFamily {
    n: usize,
    m: usize,
    s: usize,
    r: usize,
    support: Vec<usize>,
    phases: Vec<C64>,
    policy: PhasePolicy,
    spectrum: Vec<C64>,
    base_pilot: Vec<C64>,
}

/// Builds the base pilot by inverse DFT of `√(n/m)·phases` placed on `support`.
pub fn make_pilot_family(
    dft: &DftOperator,
    m: usize,
    s: usize,
    r: usize,
    support: Vec<usize>,
    policy: PhasePolicy,
) -> Result<PilotFamily> {
    let n = dft.len();
    if r * s > n {
        return Err(Error::PilotOverrun { r, s, n });
    }
    if support.len() != m || m == 0 {
        return Err(Error::SupportSize { expected: m, got: support.len() });
    }
    validate_index_set(&support, n)?;

    let phases: Vec<C64> = match policy {
        PhasePolicy::Unit => vec![C64::new(1.0, 0.0); m],
        PhasePolicy::SeededRandom { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..m).map(|_| C64::from_polar(1.0, rng.random_range(0.0..2.0 * PI))).collect()
        }
    };
    let amplitude = (n as f64 / m as f64).sqrt();
    let mut spectrum = vec![C64::new(0.0, 0.0); n];
    for (&p, &phase) in support.iter().zip(&phases) {
        spectrum[p] = phase * amplitude;
    }
    let base_pilot = dft.apply(&spectrum, Direction::Inverse)?;

    Ok(PilotFamily { n, m, s, r, support, phases, policy, spectrum, base_pilot })
}

impl PilotFamily {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Spectral phases, aligned with [`support`](Self::support).
    pub fn phases(&self) -> &[C64] {
        &self.phases
    }

    pub fn policy(&self) -> PhasePolicy {
        self.policy
    }

    /// `p̂_0 = Φ p_0`.
    pub fn base_spectrum(&self) -> &[C64] {
        &self.spectrum
    }

    pub fn base_pilot(&self) -> &[C64] {
        &self.base_pilot
    }

    /// Pilot `ℓ`: the base pilot cyclically delayed by `ℓ s`.
    pub fn pilot(&self, index: usize) -> Result<Vec<C64>> {
        if index >= self.r {
            return Err(Error::IndexOutOfRange { index, bound: self.r });
        }
        let shift = index * self.s;
        Ok((0..self.n).map(|k| self.base_pilot[(k + self.n - shift % self.n) % self.n]).collect())
    }

    /// `circ(p_0) h = Φ* diag(√n p̂_0) Φ h`.
    pub fn circulant_action(&self, dft: &DftOperator, h: &[C64]) -> Result<Vec<C64>> {
        check_len(self.n, h.len())?;
        check_len(self.n, dft.len())?;
        let mut work = dft.forward(h)?;
        let gain = (self.n as f64).sqrt();
        for (w, &p) in work.iter_mut().zip(&self.spectrum) {
            *w *= p * gain;
        }
        dft.apply_in_place(&mut work, Direction::Inverse)?;
        Ok(work)
    }
}
