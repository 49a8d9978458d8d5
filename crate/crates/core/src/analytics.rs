//! Closed-form probabilities and design rules: sub-channel overfill, pilot
//! collisions, sparsity capture, coherence tails, the `k̄_u` selection rule,
//! supported user counts and the main theorem's parameter recipe.
//!
//! Logarithms are natural.

use serde::Serialize;

use crate::traffic::PlanMode;
use crate::{Error, Result};

/// A probability bound clipped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bound {
    pub value: f64,
    /// Unclipped expression.
    pub raw: f64,
    /// The expression is at least one and says nothing.
    pub vacuous: bool,
}

impl Bound {
    pub fn new(raw: f64) -> Self {
        Self { value: raw.clamp(0.0, 1.0), raw, vacuous: raw >= 1.0 }
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive (got {x})")))
    }
}

/// `P(more than (1+λ)(m/n)u users in a sub-channel) ≤ exp(−3λ²mu/(n(1+3λ)))`.
pub fn overfill_bound(m: usize, n: usize, u: usize, lambda: f64) -> Result<Bound> {
    positive("lambda", lambda)?;
    positive("n", n as f64)?;
    let exponent = 3.0 * lambda * lambda * (m * u) as f64 / (n as f64 * (1.0 + 3.0 * lambda));
    Ok(Bound::new((-exponent).exp()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollisionBound {
    /// `min(1, k_u²/(2r))` as printed.
    pub bound: Bound,
    /// `k_u(k_u − 1)/(2r)`, the expected number of colliding pairs.
    pub pair_count: f64,
    /// `1 − exp(−k_u²/(2r))`.
    pub lower: f64,
}

/// Probability that two of `k_u` users in a sub-channel share a pilot.
pub fn collision_bound(k_u: f64, r: usize) -> Result<CollisionBound> {
    if r == 0 {
        return Err(Error::InvalidArgument("r must be at least 1".into()));
    }
    if k_u.is_nan() || k_u < 0.0 {
        return Err(Error::InvalidArgument(format!("k_u must be >= 0 (got {k_u})")));
    }
    let r = r as f64;
    Ok(CollisionBound {
        bound: Bound::new(k_u * k_u / (2.0 * r)),
        pair_count: k_u * (k_u - 1.0).max(0.0) / (2.0 * r),
        lower: 1.0 - (-k_u * k_u / (2.0 * r)).exp(),
    })
}

/// Failure probability of the sparsity capture effect,
/// `exp(−3mu/4n) + 4m²u²/(n²r)`.
pub fn sparsity_capture_failure(m: usize, n: usize, u: usize, r: usize) -> Result<Bound> {
    positive("n", n as f64)?;
    positive("r", r as f64)?;
    let (m, n, u, r) = (m as f64, n as f64, u as f64, r as f64);
    Ok(Bound::new((-3.0 * m * u / (4.0 * n)).exp() + 4.0 * m * m * u * u / (n * n * r)))
}

/// `P(μ(A) > τ/√(k_u k_s²)) ≤ 2n² exp(−3mτ²/(16 k_u k_s²))`.
pub fn coherence_tail(m: usize, k_u: f64, k_s: usize, tau: f64, n: usize) -> Result<Bound> {
    positive("k_u", k_u)?;
    positive("k_s", k_s as f64)?;
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::InvalidArgument(format!("tau must be >= 0 (got {tau})")));
    }
    let exponent = 3.0 * m as f64 * tau * tau / (16.0 * k_u * (k_s * k_s) as f64);
    Ok(Bound::new(2.0 * (n as f64).powi(2) * (-exponent).exp()))
}

/// `∏_{i=1}^{k}(1 − i/r)`, the probability that `k + 1` users pick distinct
/// pilots out of `r`.
pub fn no_collision_product(r: usize, k: usize) -> f64 {
    (1..=k).map(|i| 1.0 - i as f64 / r as f64).product()
}

/// Largest `k̄_u` with `∏_{i=1}^{k̄_u}(1 − i/r) ≥ 1 − p_u`; zero if even
/// `k̄_u = 1` fails.
pub fn select_kbar_u(r: usize, p_u: f64) -> Result<usize> {
    if r < 2 {
        return Err(Error::InvalidArgument(format!("r must be at least 2 (got {r})")));
    }
    if !(p_u > 0.0 && p_u < 1.0) {
        return Err(Error::InvalidArgument(format!("p_u must lie in (0, 1) (got {p_u})")));
    }
    let target = 1.0 - p_u;
    let mut product = 1.0;
    let mut best = 0;
    for k in 1..r {
        product *= 1.0 - k as f64 / r as f64;
        if product >= target {
            best = k;
        } else {
            break;
        }
    }
    Ok(best)
}

/// `(1 − p_u)·k̄_u·c·(1 − p_md)`.
pub fn supported_users(p_u: f64, kbar_u: usize, c: usize, p_md: f64) -> f64 {
    (1.0 - p_u) * kbar_u as f64 * c as f64 * (1.0 - p_md)
}

/// Users that fit when everyone picks from all `n_resources` at once.
pub fn baseline_no_subchannel(n_resources: usize, p_u: f64) -> Result<usize> {
    select_kbar_u(n_resources, p_u)
}

/// Derived Experiment-1 dimensions for one `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacityPoint {
    pub n: usize,
    pub r: usize,
    pub kbar_u: usize,
    pub m: usize,
    pub c: usize,
    pub supported_users: f64,
    pub baseline_users: usize,
}

impl CapacityPoint {
    pub fn ratio(&self) -> f64 {
        self.supported_users / self.baseline_users as f64
    }
}

/// `r = n/s`, `k̄_u` from the selection rule, `m = 2^⌊log₂(k̄_u k_s)⌋`,
/// `c = n/m`.
pub fn capacity_point(n: usize, s: usize, k_s: usize, p_u: f64, p_md: f64) -> Result<CapacityPoint> {
    if s == 0 || !n.is_multiple_of(s) {
        return Err(Error::InvalidArgument(format!("s = {s} must divide n = {n}")));
    }
    let r = n / s;
    let kbar_u = select_kbar_u(r, p_u)?;
    let load = kbar_u * k_s;
    if load == 0 {
        return Err(Error::NoConstruction(format!("k̄_u = 0 for r = {r}, p_u = {p_u}")));
    }
    let m = 1usize << load.ilog2();
    if m > n || !n.is_multiple_of(m) {
        return Err(Error::NoConstruction(format!("m = {m} does not divide n = {n}")));
    }
    let c = n / m;
    Ok(CapacityPoint {
        n,
        r,
        kbar_u,
        m,
        c,
        supported_users: supported_users(p_u, kbar_u, c, p_md),
        baseline_users: baseline_no_subchannel(n, p_u)?,
    })
}

/// Power-of-two divisor of `n` closest to `x` on a log scale (ties go down).
pub fn nearest_pow2_divisor(n: usize, x: f64) -> usize {
    let max_exp = n.trailing_zeros();
    let target = if x > 0.0 { x.log2() } else { 0.0 };
    (0..=max_exp)
        .min_by(|&a, &b| (a as f64 - target).abs().total_cmp(&(b as f64 - target).abs()).then(a.cmp(&b)))
        .map_or(1, |e| 1usize << e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecipeInputs {
    pub c_o: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub s: usize,
    pub k_s: usize,
    pub plan_mode: PlanMode,
}

/// Dimensioning rules of the main theorem. Constants hidden in `≲`/`≳` are
/// not invented; `t` is reported as a scaling form only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recipe {
    pub inputs: RecipeInputs,
    /// `16κ/(3C_o)`.
    pub exponent: f64,
    /// `32κ/(3C_o)`, the measurement-count factor.
    pub beta: f64,
    /// Smallest power of two with `n ≥ 8 s (16κ/3C_o)² log(n)² / ε`.
    pub n_min: usize,
    pub r_min_at_n_min: f64,
    pub u_max_at_n_min: f64,
    pub sigma2_rule: String,
    pub t_rule: String,
}

impl Recipe {
    /// `8 (16κ/3C_o)² log(n)² / ε`.
    pub fn r_min(&self, n: usize) -> f64 {
        8.0 * self.exponent.powi(2) * (n as f64).ln().powi(2) / self.inputs.epsilon
    }

    /// Largest load allowed by the overload rule of the plan mode.
    pub fn u_max(&self, n: usize) -> f64 {
        let base = n as f64 / (self.inputs.c_o * (self.inputs.k_s * self.inputs.k_s) as f64);
        match self.inputs.plan_mode {
            PlanMode::Fixed => base / (n as f64).ln(),
            PlanMode::Independent => base,
        }
    }

    /// `β log(n) n / u` before rounding.
    pub fn m_raw(&self, n: usize, u: f64) -> f64 {
        self.beta * (n as f64).ln() * n as f64 / u
    }

    /// [`m_raw`](Self::m_raw) rounded to the nearest power-of-two divisor of `n`.
    pub fn m(&self, n: usize, u: f64) -> usize {
        nearest_pow2_divisor(n, self.m_raw(n, u))
    }

    /// Per sub-channel failure probability
    /// `ε + n^{−16κ/(3C_o)} + n^{2−κ} + (t r C(s, k_s))^{1−κ}`.
    pub fn failure_probability(&self, n: usize, t: usize, r: usize) -> Bound {
        let nf = n as f64;
        let kappa = self.inputs.kappa;
        let tail = (t as f64 * r as f64 * binomial(self.inputs.s, self.inputs.k_s)).powf(1.0 - kappa);
        Bound::new(self.inputs.epsilon + nf.powf(-self.exponent) + nf.powf(2.0 - kappa) + tail)
    }

    /// `u ‖h‖² / log(n)²` with the hidden constant set to one.
    pub fn sigma2_cap(&self, n: usize, u: f64, h_norm2: f64) -> f64 {
        u * h_norm2 / (n as f64).ln().powi(2)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn parameter_recipe(inputs: RecipeInputs) -> Result<Recipe> {
    if inputs.kappa.is_nan() || inputs.kappa <= 2.0 {
        return Err(Error::InvalidArgument(format!("kappa > 2 required (got {})", inputs.kappa)));
    }
    if inputs.c_o.is_nan() || inputs.c_o <= 0.0 {
        return Err(Error::InvalidArgument(format!("C_o > 0 required (got {})", inputs.c_o)));
    }
    if !(inputs.epsilon > 0.0 && inputs.epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1) (got {})", inputs.epsilon)));
    }
    if inputs.s == 0 || inputs.k_s == 0 || inputs.k_s > inputs.s {
        return Err(Error::InvalidArgument(format!("need 1 <= k_s <= s (k_s = {}, s = {})", inputs.k_s, inputs.s)));
    }
    let exponent = 16.0 * inputs.kappa / (3.0 * inputs.c_o);
    let beta = 32.0 * inputs.kappa / (3.0 * inputs.c_o);
    let lower = |n: usize| 8.0 * inputs.s as f64 * exponent.powi(2) * (n as f64).ln().powi(2) / inputs.epsilon;
    let n_min = (1..63)
        .map(|e| 1usize << e)
        .find(|&n| n as f64 >= lower(n))
        .ok_or_else(|| Error::NoConstruction("no power of two below 2^63 satisfies the n bound".into()))?;
    let t_rule = match inputs.plan_mode {
        PlanMode::Fixed => "t / log(t)^2 >~ (log r + k_s log s)^2; tune t empirically",
        PlanMode::Independent => "t / log(t n)^4 >~ (log r + k_s log s)^2; tune t empirically",
    };
    let mut recipe = Recipe {
        inputs,
        exponent,
        beta,
        n_min,
        r_min_at_n_min: 0.0,
        u_max_at_n_min: 0.0,
        sigma2_rule: "sigma^2 <~ u ||h||^2 / log(n)^2".into(),
        t_rule: t_rule.into(),
    };
    recipe.r_min_at_n_min = recipe.r_min(n_min);
    recipe.u_max_at_n_min = recipe.u_max(n_min);
    Ok(recipe)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn overfill_examples() {
        // λ = 1, m/n = 1/8, u = 80: exponent 3·80/(8·4) = 7.5.
        let b = overfill_bound(8, 64, 80, 1.0).unwrap();
        assert!(close(b.value, (-7.5f64).exp(), 1e-12));
        assert!(close(b.value, 5.531e-4, 1e-3));
        assert!(close(overfill_bound(8, 64, 80, 1e-9).unwrap().value, 1.0, 1e-12));
        let zero = overfill_bound(8, 64, 0, 1.0).unwrap();
        assert_eq!(zero.value, 1.0);
        assert!(zero.vacuous);
        assert!(overfill_bound(8, 64, 80, 0.0).is_err());
    }

    #[test]
    fn collision_examples() {
        let b = collision_bound(4.0, 256).unwrap();
        assert_eq!(b.bound.value, 0.03125);
        assert!(close(b.pair_count, 12.0 / 512.0, 1e-15));
        assert!(b.lower <= b.bound.value);
        assert_eq!(collision_bound(0.0, 256).unwrap().bound.value, 0.0);
        let one = collision_bound(1.0, 256).unwrap();
        assert_eq!(one.bound.value, 1.0 / 512.0);
        assert_eq!(one.pair_count, 0.0);
        assert!(collision_bound(100.0, 4).unwrap().bound.vacuous);
    }

    #[test]
    fn sparsity_capture_examples() {
        let b = sparsity_capture_failure(8, 64, 80, 256).unwrap();
        assert!(close(b.raw, (-7.5f64).exp() + 1.5625, 1e-12));
        assert_eq!(b.value, 1.0);
        assert!(b.vacuous);
        let far = sparsity_capture_failure(8, 64, 80, usize::MAX).unwrap();
        assert!(close(far.value, (-7.5f64).exp(), 1e-9));
        assert_eq!(sparsity_capture_failure(8, 64, 0, 256).unwrap().value, 1.0);
    }

    #[test]
    fn coherence_tail_examples() {
        assert_eq!(coherence_tail(64, 2.0, 2, 0.0, 256).unwrap().value, 1.0);
        let b = coherence_tail(512, 2.0, 2, 1.0, 256).unwrap();
        assert!(close(b.value, 131072.0 * (-12.0f64).exp(), 1e-12));
        assert!(close(b.value, 0.8054, 1e-3));
        // Doubling m squares the exponential factor.
        let f1 = coherence_tail(1024, 2.0, 2, 1.0, 256).unwrap().raw / 131072.0;
        assert!(close(f1, (b.raw / 131072.0).powi(2), 1e-12));
    }

    #[test]
    fn kbar_examples() {
        assert_eq!(select_kbar_u(256, 0.1).unwrap(), 6);
        assert!(no_collision_product(256, 6) >= 0.9 && no_collision_product(256, 7) < 0.9);
        assert!(close(no_collision_product(256, 6), 0.9206, 1e-4));
        assert_eq!(select_kbar_u(4, 0.9).unwrap(), 2);
        assert_eq!(select_kbar_u(16, 1.0 - 1e-12).unwrap(), 15);
        assert_eq!(select_kbar_u(1000, 1e-9).unwrap(), 0);
        assert!(select_kbar_u(1, 0.5).is_err());
        assert!(select_kbar_u(10, 1.0).is_err());
    }

    #[test]
    fn kbar_is_the_boundary_of_the_product_rule() {
        for r in [2, 3, 8, 64, 100, 1000, 4096] {
            for p_u in [0.01, 0.1, 0.3, 0.5, 0.9] {
                let k = select_kbar_u(r, p_u).unwrap();
                assert!(no_collision_product(r, k) >= 1.0 - p_u);
                assert!(no_collision_product(r, k + 1) < 1.0 - p_u);
            }
        }
    }

    #[test]
    fn supported_user_examples() {
        assert!(close(supported_users(0.1, 6, 128, 0.1), 622.08, 1e-12));
        assert_eq!(supported_users(0.1, 6, 128, 1.0), 0.0);
        assert!(close(supported_users(0.2, 5, 1, 0.3), 0.8 * 0.7 * 5.0, 1e-12));
    }

    #[test]
    fn baseline_examples() {
        let k = baseline_no_subchannel(2048, 0.1).unwrap();
        assert!(no_collision_product(2048, k) >= 0.9 && no_collision_product(2048, k + 1) < 0.9);
        assert!(baseline_no_subchannel(2048, 1e-12).unwrap() <= 1);
    }

    #[test]
    fn experiment_one_dimensions() {
        let p = capacity_point(2048, 8, 4, 0.1, 0.1).unwrap();
        assert_eq!((p.r, p.kbar_u, p.m, p.c), (256, 6, 16, 128));
        assert!(close(p.supported_users, 622.08, 1e-12));
        let p = capacity_point(512, 8, 4, 0.1, 0.1).unwrap();
        assert_eq!((p.r, p.kbar_u, p.m, p.c), (64, 3, 8, 64));
    }

    fn inputs(plan_mode: PlanMode) -> RecipeInputs {
        RecipeInputs { c_o: 0.5, kappa: 3.0, epsilon: 0.1, s: 8, k_s: 4, plan_mode }
    }

    #[test]
    fn recipe_n_min_is_the_first_power_of_two_that_fits() {
        let rec = parameter_recipe(inputs(PlanMode::Fixed)).unwrap();
        let lhs = |n: usize| 8.0 * 8.0 * 32.0f64.powi(2) * (n as f64).ln().powi(2) * 10.0;
        assert!(rec.n_min as f64 >= lhs(rec.n_min));
        assert!(((rec.n_min / 2) as f64) < lhs(rec.n_min / 2));
        assert_eq!(rec.exponent, 32.0);
        assert_eq!(rec.beta, 64.0);
        assert!(close(rec.r_min(rec.n_min) * 8.0, lhs(rec.n_min), 1e-12));
    }

    #[test]
    fn recipe_load_rules() {
        let rec = parameter_recipe(inputs(PlanMode::Independent)).unwrap();
        assert!(close(rec.u_max(4096), 4096.0 / 8.0, 1e-12));
        let rec = parameter_recipe(inputs(PlanMode::Fixed)).unwrap();
        assert!(close(rec.u_max(4096), 4096.0 / (8.0 * 4096f64.ln()), 1e-12));
    }

    #[test]
    fn recipe_rejects_bad_constants() {
        let mut i = inputs(PlanMode::Fixed);
        i.kappa = 2.0;
        assert!(parameter_recipe(i).unwrap_err().to_string().contains("kappa > 2"));
        let mut i = inputs(PlanMode::Fixed);
        i.c_o = 0.0;
        assert!(parameter_recipe(i).is_err());
    }

    #[test]
    fn m_rule_rounds_to_power_of_two_divisors() {
        assert_eq!(nearest_pow2_divisor(1024, 24.0), 32);
        assert_eq!(nearest_pow2_divisor(1024, 22.0), 16);
        assert_eq!(nearest_pow2_divisor(1024, 1e9), 1024);
        assert_eq!(nearest_pow2_divisor(96, 100.0), 32);
        let rec = parameter_recipe(inputs(PlanMode::Fixed)).unwrap();
        let m = rec.m(1 << 20, 1e6);
        assert!((1 << 20) % m == 0 && m.is_power_of_two());
    }

    #[test]
    fn failure_probability_terms() {
        let rec = parameter_recipe(inputs(PlanMode::Fixed)).unwrap();
        let p = rec.failure_probability(1 << 20, 100, 1 << 17);
        let want =
            0.1 + (2f64.powi(20)).powf(-32.0) + (2f64.powi(20)).powf(-1.0) + (100.0 * 131072.0 * 70.0f64).powf(-2.0);
        assert!(close(p.raw, want, 1e-12));
        assert!(!p.vacuous);
    }

    #[test]
    fn bounds_are_monotone() {
        let mut prev = 1.0;
        for u in [10, 20, 40, 80, 160] {
            let v = overfill_bound(8, 64, u, 0.5).unwrap().value;
            assert!(v <= prev);
            prev = v;
        }
        let mut prev = 1.0;
        for tau in [0.5, 1.0, 2.0, 4.0] {
            let v = coherence_tail(512, 2.0, 2, tau, 64).unwrap().value;
            assert!(v <= prev);
            prev = v;
        }
    }
}
