//! DFT machinery.
//!
//! [`DftOperator`] applies the unitary DFT `Φ` with `Φ_pq = n^{-1/2} e^{-2πi pq/n}`
//! and its adjoint through `rustfft`. [`SubsampledDft`] is the energy preserving
//! row selection `A = √(n/m) Φ_B` every sub-channel measures with.
//!
//! The Gram matrix of `A` is Toeplitz: `⟨a_k, a_l⟩` only depends on `l - k`, so
//! the mutual coherence over any leading column range is read off a single
//! length-`n` transform of the row indicator.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result, C64};

/// Relative tolerance for numerical rank decisions.
pub const RANK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `v -> Φ v`
    Forward,
    /// `v -> Φ* v`
    Inverse,
}

/// Unitary DFT of a fixed length.
#[derive(Clone)]
pub struct DftOperator {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl fmt::Debug for DftOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DftOperator").field("n", &self.n).finish()
    }
}

impl DftOperator {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("DFT length must be positive".into()));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            scale: 1.0 / (n as f64).sqrt(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn apply(&self, v: &[C64], direction: Direction) -> Result<Vec<C64>> {
        let mut out = v.to_vec();
        self.apply_in_place(&mut out, direction)?;
        Ok(out)
    }

    pub fn apply_in_place(&self, v: &mut [C64], direction: Direction) -> Result<()> {
        check_len(self.n, v.len())?;
        match direction {
            Direction::Forward => self.forward.process(v),
            Direction::Inverse => self.inverse.process(v),
        }
        for z in v.iter_mut() {
            *z *= self.scale;
        }
        Ok(())
    }

    pub fn forward(&self, v: &[C64]) -> Result<Vec<C64>> {
        self.apply(v, Direction::Forward)
    }

    pub fn inverse(&self, v: &[C64]) -> Result<Vec<C64>> {
        self.apply(v, Direction::Inverse)
    }

    /// Entry `Φ_pq`.
    pub fn entry(&self, p: usize, q: usize) -> C64 {
        dft_entry(self.n, p, q)
    }
}

/// `Φ_pq = n^{-1/2} e^{-2πi pq/n}` with the product reduced mod `n` first.
pub fn dft_entry(n: usize, p: usize, q: usize) -> C64 {
    let k = ((p as u128 * q as u128) % n as u128) as f64;
    C64::from_polar(1.0 / (n as f64).sqrt(), -2.0 * PI * k / n as f64)
}

/// Direct `O(n²)` matrix action of `Φ` or `Φ*`; the reference for the FFT path.
pub fn apply_dft_direct(v: &[C64], direction: Direction) -> Vec<C64> {
    let n = v.len();
    (0..n)
        .map(|p| {
            v.iter()
                .enumerate()
                .map(|(q, &x)| {
                    let w = dft_entry(n, p, q);
                    match direction {
                        Direction::Forward => w * x,
                        Direction::Inverse => w.conj() * x,
                    }
                })
                .sum()
        })
        .collect()
}

/// `A = √(n/m) Φ_B` for an ordered row set `B`.
#[derive(Debug, Clone)]
pub struct SubsampledDft {
    parent: Arc<DftOperator>,
    rows: Vec<usize>,
    scale: f64,
}

impl SubsampledDft {
    pub fn new(parent: Arc<DftOperator>, rows: Vec<usize>) -> Result<Self> {
        let n = parent.len();
        if rows.is_empty() {
            return Err(Error::InvalidArgument("row set must be nonempty".into()));
        }
        validate_index_set(&rows, n)?;
        let scale = (n as f64 / rows.len() as f64).sqrt();
        Ok(Self { parent, rows, scale })
    }

    pub fn n(&self) -> usize {
        self.parent.len()
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn parent(&self) -> &Arc<DftOperator> {
        &self.parent
    }

    /// `A v` for `v ∈ ℂ^n`.
    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>> {
        let spectrum = self.parent.forward(v)?;
        Ok(self.rows.iter().map(|&p| spectrum[p] * self.scale).collect())
    }

    /// `A v` where `v` is given on its leading `v.len() ≤ n` coordinates.
    pub fn apply_padded(&self, v: &[C64]) -> Result<Vec<C64>> {
        let n = self.n();
        if v.len() > n {
            return Err(Error::DimensionMismatch { expected: n, got: v.len() });
        }
        let mut full = vec![C64::new(0.0, 0.0); n];
        full[..v.len()].copy_from_slice(v);
        self.apply(&full)
    }

    /// `A* b`, truncated to the leading `n_cols` coordinates.
    pub fn adjoint(&self, b: &[C64], n_cols: usize) -> Result<Vec<C64>> {
        check_len(self.m(), b.len())?;
        let n = self.n();
        if n_cols > n {
            return Err(Error::DimensionMismatch { expected: n, got: n_cols });
        }
        let mut spectrum = vec![C64::new(0.0, 0.0); n];
        for (&p, &x) in self.rows.iter().zip(b) {
            spectrum[p] = x * self.scale;
        }
        self.parent.apply_in_place(&mut spectrum, Direction::Inverse)?;
        spectrum.truncate(n_cols);
        Ok(spectrum)
    }

    /// Column `a_k`.
    pub fn column(&self, k: usize) -> Vec<C64> {
        let n = self.n();
        self.rows.iter().map(|&p| dft_entry(n, p, k) * self.scale).collect()
    }

    /// Dense `m × |cols|` matrix `A_cols`.
    pub fn submatrix(&self, cols: &[usize]) -> DMatrix<C64> {
        let n = self.n();
        DMatrix::from_fn(self.m(), cols.len(), |i, j| dft_entry(n, self.rows[i], cols[j]) * self.scale)
    }
}

/// Applies `op` to `v`; see [`SubsampledDft::apply`].
pub fn apply_subsampled(op: &SubsampledDft, v: &[C64]) -> Result<Vec<C64>> {
    op.apply(v)
}

/// Mutual coherence `max_{k≠l} |⟨a_k, a_l⟩|` over the columns
/// `0..min(n, active_cols)` (all `n` columns when `active_cols` is `None`).
///
/// Uses `⟨a_k, a_l⟩ = m^{-1} Σ_{p∈B} e^{-2πi p (l-k)/n}`, which is one forward
/// transform of the indicator of `B`.
pub fn coherence(op: &SubsampledDft, active_cols: Option<usize>) -> f64 {
    let n = op.n();
    let n_cols = active_cols.map_or(n, |c| c.min(n));
    if n_cols < 2 {
        return 0.0;
    }
    let mut indicator = vec![C64::new(0.0, 0.0); n];
    for &p in op.rows() {
        indicator[p] = C64::new(1.0, 0.0);
    }
    let spectrum = op.parent().forward(&indicator).expect("indicator has parent length");
    let norm = (n as f64).sqrt() / op.m() as f64;
    spectrum[1..n_cols].iter().map(|g| (g * norm).norm()).fold(0.0, f64::max).min(1.0)
}

/// Welch lower bound `√((n_cols − m)/(m (n_cols − 1)))` on the coherence of
/// `n_cols` unit vectors in `ℂ^m`; zero when `m ≥ n_cols`.
pub fn welch_bound(n_cols: usize, m: usize) -> f64 {
    if n_cols < 2 || m == 0 || m >= n_cols {
        return 0.0;
    }
    ((n_cols - m) as f64 / (m as f64 * (n_cols - 1) as f64)).sqrt()
}

/// Trial-division primality test.
pub fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    if n < 4 {
        return true;
    }
    if n.is_multiple_of(2) {
        return false;
    }
    let mut d = 3;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

/// Singular values of the `rows × cols` submatrix of the unitary `n`-point DFT,
/// in decreasing order.
pub fn dft_submatrix_singular_values(n: usize, rows: &[usize], cols: &[usize]) -> Vec<f64> {
    if rows.is_empty() || cols.is_empty() {
        return Vec::new();
    }
    let m = DMatrix::from_fn(rows.len(), cols.len(), |i, j| dft_entry(n, rows[i], cols[j]));
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Numerical rank: singular values above `RANK_TOLERANCE` times the largest.
pub fn numerical_rank(singular_values: &[f64]) -> usize {
    let largest = singular_values.iter().copied().fold(0.0, f64::max);
    if largest == 0.0 {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > RANK_TOLERANCE * largest).count()
}

/// Whether the `rows × cols` submatrix of the prime-size DFT has full row rank.
pub fn prime_submatrix_injective(n: usize, rows: &[usize], cols: &[usize]) -> Result<bool> {
    if !is_prime(n) {
        return Err(Error::NotPrime(n));
    }
    if rows.len() > cols.len() {
        return Err(Error::InvalidArgument(format!("need |rows| <= |cols|, got {} > {}", rows.len(), cols.len())));
    }
    validate_index_set(rows, n)?;
    validate_index_set(cols, n)?;
    let sv = dft_submatrix_singular_values(n, rows, cols);
    Ok(numerical_rank(&sv) == rows.len())
}

/// Square singular DFT submatrix for composite `n = p q`: columns `p·[q]`,
/// rows the first `q` indices avoiding `q·[p]`.
pub fn composite_counterexample(p: usize, q: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if p < 2 || q < 2 {
        return Err(Error::InvalidArgument(format!("need p, q >= 2, got ({p}, {q})")));
    }
    let n = p * q;
    let cols: Vec<usize> = (0..q).map(|j| p * j).collect();
    let rows: Vec<usize> = (0..n).filter(|k| k % q != 0).take(q).collect();
    if rows.len() < q {
        return Err(Error::NoConstruction(format!("fewer than {q} rows avoid multiples of {q} in [{n}]")));
    }
    Ok((rows, cols))
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub(crate) fn validate_index_set(indices: &[usize], bound: usize) -> Result<()> {
    let mut seen = HashSet::with_capacity(indices.len());
    for &i in indices {
        if i >= bound {
            return Err(Error::IndexOutOfRange { index: i, bound });
        }
        if !seen.insert(i) {
            return Err(Error::DuplicateIndex(i));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<C64> {
        (0..n).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    fn basis(n: usize, k: usize) -> Vec<C64> {
        let mut v = vec![c(0.0, 0.0); n];
        v[k] = c(1.0, 0.0);
        v
    }

    fn close(a: &[C64], b: &[C64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).norm() <= tol)
    }

    fn op(n: usize, rows: Vec<usize>) -> SubsampledDft {
        SubsampledDft::new(Arc::new(DftOperator::new(n).unwrap()), rows).unwrap()
    }

    #[test]
    fn forward_of_first_basis_vector_is_flat() {
        let dft = DftOperator::new(4).unwrap();
        let out = dft.forward(&basis(4, 0)).unwrap();
        assert!(close(&out, &[c(0.5, 0.0); 4], 1e-12));
    }

    #[test]
    fn forward_of_second_basis_vector() {
        let dft = DftOperator::new(4).unwrap();
        let out = dft.forward(&basis(4, 1)).unwrap();
        let expected = [c(0.5, 0.0), c(0.0, -0.5), c(-0.5, 0.0), c(0.0, 0.5)];
        assert!(close(&out, &expected, 1e-12));
    }

    #[test]
    fn round_trip_and_norm_preservation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &n in &[4, 16, 64, 257] {
            let dft = DftOperator::new(n).unwrap();
            for _ in 0..100 {
                let v = random_vec(&mut rng, n);
                let fv = dft.forward(&v).unwrap();
                assert!((norm(&fv) - norm(&v)).abs() <= 1e-10 * norm(&v));
                let back = dft.inverse(&fv).unwrap();
                assert!(close(&back, &v, 1e-10 * norm(&v)));
            }
        }
    }

    #[test]
    fn fft_matches_direct_matrix_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [1, 2, 3, 8, 12, 31, 64] {
            let dft = DftOperator::new(n).unwrap();
            let v = random_vec(&mut rng, n);
            for dir in [Direction::Forward, Direction::Inverse] {
                let fast = dft.apply(&v, dir).unwrap();
                let slow = apply_dft_direct(&v, dir);
                let diff: Vec<C64> = fast.iter().zip(&slow).map(|(a, b)| a - b).collect();
                assert!(norm(&diff) <= 1e-9 * norm(&slow));
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let dft = DftOperator::new(8).unwrap();
        assert!(matches!(dft.forward(&[c(1.0, 0.0); 7]), Err(Error::DimensionMismatch { expected: 8, got: 7 })));
        let a = op(8, vec![0, 3]);
        assert!(a.apply(&[c(1.0, 0.0); 4]).is_err());
        assert!(a.adjoint(&[c(1.0, 0.0); 3], 8).is_err());
    }

    #[test]
    fn subsampled_examples() {
        let full = op(4, vec![0, 1, 2, 3]);
        let dft = DftOperator::new(4).unwrap();
        let v = vec![c(1.0, 2.0), c(-0.5, 0.0), c(0.0, 1.0), c(3.0, -1.0)];
        assert!(close(&full.apply(&v).unwrap(), &dft.forward(&v).unwrap(), 1e-12));

        let single = op(4, vec![0]);
        assert!(close(&single.apply(&basis(4, 0)).unwrap(), &[c(1.0, 0.0)], 1e-12));
        assert!(close(&single.apply(&[c(0.0, 0.0); 4]).unwrap(), &[c(0.0, 0.0)], 0.0));
    }

    #[test]
    fn adjoint_is_the_conjugate_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = op(16, vec![1, 4, 5, 11, 15]);
        let v = random_vec(&mut rng, 16);
        let b = random_vec(&mut rng, 5);
        let av = a.apply(&v).unwrap();
        let atb = a.adjoint(&b, 16).unwrap();
        let lhs: C64 = av.iter().zip(&b).map(|(x, y)| x.conj() * y).sum();
        let rhs: C64 = v.iter().zip(&atb).map(|(x, y)| x.conj() * y).sum();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn columns_have_unit_norm() {
        let a = op(64, vec![0, 5, 9, 17, 33, 40, 63]);
        for k in 0..64 {
            assert!((norm(&a.column(k)) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn row_sets_are_validated() {
        let dft = Arc::new(DftOperator::new(8).unwrap());
        assert!(matches!(SubsampledDft::new(dft.clone(), vec![1, 1]), Err(Error::DuplicateIndex(1))));
        assert!(matches!(SubsampledDft::new(dft.clone(), vec![8]), Err(Error::IndexOutOfRange { index: 8, bound: 8 })));
        assert!(SubsampledDft::new(dft, vec![]).is_err());
    }

    /// Brute force over all column pairs.
    fn coherence_oracle(a: &SubsampledDft, n_cols: usize) -> f64 {
        let cols: Vec<Vec<C64>> = (0..n_cols).map(|k| a.column(k)).collect();
        let mut best: f64 = 0.0;
        for k in 0..n_cols {
            for l in k + 1..n_cols {
                let ip: C64 = cols[k].iter().zip(&cols[l]).map(|(x, y)| x.conj() * y).sum();
                best = best.max(ip.norm());
            }
        }
        best
    }

    #[test]
    fn coherence_examples() {
        assert!(coherence(&op(8, (0..8).collect()), None) < 1e-12);
        let half = op(4, vec![0, 1]);
        assert!((coherence(&half, None) - 2f64.sqrt() / 2.0).abs() < 1e-12);
        assert!((coherence_oracle(&half, 4) - 2f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn coherence_matches_pairwise_oracle_and_dominates_welch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.random_range(2..48);
            let m = rng.random_range(1..=n);
            let mut idx: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
            idx.truncate(m);
            let a = op(n, idx);
            let n_cols = rng.random_range(2..=n);
            let mu = coherence(&a, Some(n_cols));
            assert!((mu - coherence_oracle(&a, n_cols)).abs() < 1e-10);
            assert!(mu + 1e-12 >= welch_bound(n_cols, m));
            assert!((0.0..=1.0).contains(&mu));
        }
    }

    #[test]
    fn welch_bound_examples() {
        assert!((welch_bound(4, 2) - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(welch_bound(4, 4), 0.0);
        assert!((welch_bound(2, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn primality() {
        let primes: Vec<usize> = (0..40).filter(|&k| is_prime(k)).collect();
        assert_eq!(primes, vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37]);
        assert!(is_prime(8191));
        assert!(!is_prime(8192));
    }

    #[test]
    fn prime_submatrix_examples() {
        assert!(prime_submatrix_injective(5, &[0, 1], &[2, 4]).unwrap());
        assert!(matches!(prime_submatrix_injective(6, &[0], &[1]), Err(Error::NotPrime(6))));
        let mut count = 0;
        for r0 in 0..7 {
            for r1 in r0 + 1..7 {
                for c0 in 0..7 {
                    for c1 in c0 + 1..7 {
                        assert!(prime_submatrix_injective(7, &[r0, r1], &[c0, c1]).unwrap());
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 441);
    }

    #[test]
    fn composite_counterexamples_are_singular() {
        let (rows, cols) = composite_counterexample(2, 3).unwrap();
        assert_eq!(cols, vec![0, 2, 4]);
        assert!(rows.iter().all(|r| [1, 2, 4, 5].contains(r)));
        for (p, q) in [(2, 3), (3, 2), (2, 2), (3, 3)] {
            let (rows, cols) = composite_counterexample(p, q).unwrap();
            assert_eq!(rows.len(), cols.len());
            let sv = dft_submatrix_singular_values(p * q, &rows, &cols);
            assert!(sv.last().unwrap() < &(1e-8 * sv[0]), "({p},{q}) {sv:?}");
        }
        assert_eq!(composite_counterexample(3, 2).unwrap().1, vec![0, 3]);
        assert_eq!(composite_counterexample(2, 2).unwrap(), (vec![1, 3], vec![0, 2]));
        assert!(composite_counterexample(1, 5).is_err());
    }
}
