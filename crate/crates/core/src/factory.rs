//! Coin combinators: build a coin with bias `f(p, ...)` from coins with
//! unknown biases `p, ...`, exactly.
//!
//! A [`CoinExpr`] is an immutable description of a combinator tree. Flipping
//! it consumes base draws from the leaf sources (metered through the session
//! ledger) plus internal randomness from the session stream (unmetered —
//! only input-distribution samples count toward sample complexity).
//!
//! Supported nodes and their exact biases:
//!
//! | node                  | bias                | base draws per flip    |
//! |-----------------------|---------------------|------------------------|
//! | `leaf`                | `p`                 | 1                      |
//! | `from_values`         | `E[Z]`              | 1                      |
//! | `constant`            | `c`                 | 0                      |
//! | `scale(λ)`            | `λ·p`               | 1                      |
//! | `complement`          | `1 − p`             | 1                      |
//! | `double(δ)`           | `2p`                | `O(1/δ)` expected      |
//! | `pgf(D)`              | `E_{K∼D}[p^K]`      | `E[K]` expected        |
//! | `exponentiate(λ)`     | `e^{λ(p−1)}`        | `λ` expected           |
//! | `average`             | `(p₁+p₂)/2`         | 1                      |
//! | `add(δ)`              | `p₁+p₂`             | `O(1/δ)` expected      |
//! | `affine(w, s)`        | `w·p + s`           | at most 1              |
//!
//! Doubling requires `p ≤ 1/2 − δ` and addition requires `p₁+p₂ ≤ 1−δ`.
//! In the black-box model the caller guarantees the slack; a violation makes
//! the output slower (and, if `2p ≥ 1`, pins it at heads) but the combinator
//! still terminates with probability one under any sample budget.

use crate::error::Error;
use crate::rng::{Session, SourceId, Stream};
use crate::sources::{BitSource, RealSource};
use crate::Result;

/// Distribution over non-negative integers used by the probability
/// generating function combinator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntDist {
    Const(u64),
    Poisson(f64),
}

impl IntDist {
    pub fn sample(&self, rng: &mut Stream) -> u64 {
        match *self {
            IntDist::Const(k) => k,
            IntDist::Poisson(lambda) => poisson(lambda, rng),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            IntDist::Const(k) => k as f64,
            IntDist::Poisson(lambda) => lambda,
        }
    }

    /// `E[p^K]` in closed form.
    pub fn pgf(&self, p: f64) -> f64 {
        match *self {
            IntDist::Const(k) => p.powi(k as i32),
            IntDist::Poisson(lambda) => (lambda * (p - 1.0)).exp(),
        }
    }
}

/// A composable coin. Leaves borrow base sources; everything above the
/// leaves is pure description, so expressions are freely cloneable and a
/// flipping session over one is single-owner.
#[derive(Clone)]
pub enum CoinExpr<'a> {
    Leaf(&'a dyn BitSource),
    FromValues(&'a dyn RealSource),
    Const(f64),
    Scale(f64, Box<CoinExpr<'a>>),
    Complement(Box<CoinExpr<'a>>),
    Double { slack: f64, child: Box<CoinExpr<'a>> },
    Pgf(IntDist, Box<CoinExpr<'a>>),
    Exponentiate(f64, Box<CoinExpr<'a>>),
    Average(Box<CoinExpr<'a>>, Box<CoinExpr<'a>>),
    Add { slack: f64, left: Box<CoinExpr<'a>>, right: Box<CoinExpr<'a>> },
    Affine { weight: f64, shift: f64, child: Box<CoinExpr<'a>> },
}

impl std::fmt::Debug for CoinExpr<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CoinExpr::Leaf(c) => write!(f, "leaf:{}", c.id().0),
            CoinExpr::FromValues(v) => write!(f, "values:{}", v.id().0),
            CoinExpr::Const(p) => write!(f, "const {p}"),
            CoinExpr::Scale(l, c) => write!(f, "(scale {l} {c:?})"),
            CoinExpr::Complement(c) => write!(f, "(comp {c:?})"),
            CoinExpr::Double { slack, child } => write!(f, "(double {slack} {child:?})"),
            CoinExpr::Pgf(d, c) => write!(f, "(pgf {d:?} {c:?})"),
            CoinExpr::Exponentiate(l, c) => write!(f, "(exp {l} {c:?})"),
            CoinExpr::Average(a, b) => write!(f, "(avg {a:?} {b:?})"),
            CoinExpr::Add { slack, left, right } => write!(f, "(add {slack} {left:?} {right:?})"),
            CoinExpr::Affine { weight, shift, child } => {
                write!(f, "(affine {weight} {shift} {child:?})")
            }
        }
    }
}

impl<'a> CoinExpr<'a> {
    pub fn leaf(source: &'a dyn BitSource) -> Self {
        CoinExpr::Leaf(source)
    }

    /// Coin with bias `E[Z]` from one draw of a `[0,1]`-valued source.
    pub fn from_values(source: &'a dyn RealSource) -> Self {
        CoinExpr::FromValues(source)
    }

    /// Parameter coin with a known constant bias; uses no base draws.
    pub fn constant(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "constant bias {p} outside [0,1]"
            )));
        }
        Ok(CoinExpr::Const(p))
    }

    pub fn scale(lambda: f64, child: CoinExpr<'a>) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidParameter(format!(
                "scale factor {lambda} outside [0,1]"
            )));
        }
        Ok(CoinExpr::Scale(lambda, Box::new(child)))
    }

    pub fn complement(child: CoinExpr<'a>) -> Self {
        CoinExpr::Complement(Box::new(child))
    }

    /// Coin with bias `2p`, assuming `p ≤ 1/2 − slack`.
    pub fn double(child: CoinExpr<'a>, slack: f64) -> Result<Self> {
        if slack <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "doubling slack {slack} must be positive"
            )));
        }
        Ok(CoinExpr::Double {
            slack,
            child: Box::new(child),
        })
    }

    pub fn pgf(dist: IntDist, child: CoinExpr<'a>) -> Self {
        CoinExpr::Pgf(dist, Box::new(child))
    }

    /// Coin with bias `e^{λ(p−1)}`: the probability generating function
    /// combinator driven by a Poisson(λ) index count.
    pub fn exponentiate(lambda: f64, child: CoinExpr<'a>) -> Result<Self> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "exponentiation rate {lambda} must be non-negative"
            )));
        }
        Ok(CoinExpr::Exponentiate(lambda, Box::new(child)))
    }

    pub fn average(left: CoinExpr<'a>, right: CoinExpr<'a>) -> Self {
        CoinExpr::Average(Box::new(left), Box::new(right))
    }

    /// Coin with bias `p₁+p₂`, assuming `p₁+p₂ ≤ 1 − slack`.
    /// Doubling applied to averaging.
    pub fn add(left: CoinExpr<'a>, right: CoinExpr<'a>, slack: f64) -> Result<Self> {
        if slack <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "addition slack {slack} must be positive"
            )));
        }
        Ok(CoinExpr::Add {
            slack,
            left: Box::new(left),
            right: Box::new(right),
        })
    }

    /// Coin with bias `weight·p + shift`, for `weight, shift ≥ 0` with
    /// `weight + shift ≤ 1`: a three-way mixture of the child, a sure heads,
    /// and a sure tails. Exact, with at most one child draw per flip —
    /// the cheap alternative to addition when the shift is a known constant
    /// inside the convex range.
    pub fn affine(weight: f64, shift: f64, child: CoinExpr<'a>) -> Result<Self> {
        if weight < 0.0 || shift < 0.0 || weight + shift > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "affine coefficients ({weight}, {shift}) outside the convex range"
            )));
        }
        Ok(CoinExpr::Affine {
            weight,
            shift,
            child: Box::new(child),
        })
    }

    /// One flip. Base draws are metered at the leaves; combinator-internal
    /// randomness comes from the session stream and is not metered.
    pub fn flip(&self, s: &mut Session) -> Result<bool> {
        match self {
            CoinExpr::Leaf(c) => c.flip(s),
            CoinExpr::FromValues(v) => {
                let z = v.draw(s)?;
                Ok(s.rng().bernoulli(z))
            }
            CoinExpr::Const(p) => Ok(s.rng().bernoulli(*p)),
            CoinExpr::Scale(lambda, child) => {
                // Always one child draw, so the per-flip cost is deterministic.
                let p = child.flip(s)?;
                let keep = s.rng().bernoulli(*lambda);
                Ok(p && keep)
            }
            CoinExpr::Complement(child) => Ok(!child.flip(s)?),
            CoinExpr::Double { slack, child } => {
                flip_doubled(&mut |s| child.flip(s), *slack, s)
            }
            CoinExpr::Pgf(dist, child) => {
                let k = dist.sample(s.rng());
                flip_all_heads(child, k, s)
            }
            CoinExpr::Exponentiate(lambda, child) => {
                let k = poisson(*lambda, s.rng());
                flip_all_heads(child, k, s)
            }
            CoinExpr::Average(left, right) => {
                if s.rng().bernoulli(0.5) {
                    left.flip(s)
                } else {
                    right.flip(s)
                }
            }
            CoinExpr::Add { slack, left, right } => {
                // p₁+p₂ ≤ 1−δ means the averaged coin has p ≤ 1/2 − δ/2.
                flip_doubled(
                    &mut |s| {
                        if s.rng().bernoulli(0.5) {
                            left.flip(s)
                        } else {
                            right.flip(s)
                        }
                    },
                    slack / 2.0,
                    s,
                )
            }
            CoinExpr::Affine { weight, shift, child } => {
                let u = s.rng().f64();
                if u < *weight {
                    child.flip(s)
                } else {
                    Ok(u < weight + shift)
                }
            }
        }
    }

    /// Exact bias given the leaf biases/means, for verification and reports.
    pub fn closed_form_bias(&self, leaf_bias: &dyn Fn(SourceId) -> f64) -> f64 {
        match self {
            CoinExpr::Leaf(c) => leaf_bias(c.id()),
            CoinExpr::FromValues(v) => leaf_bias(v.id()),
            CoinExpr::Const(p) => *p,
            CoinExpr::Scale(lambda, child) => lambda * child.closed_form_bias(leaf_bias),
            CoinExpr::Complement(child) => 1.0 - child.closed_form_bias(leaf_bias),
            CoinExpr::Double { child, .. } => 2.0 * child.closed_form_bias(leaf_bias),
            CoinExpr::Pgf(dist, child) => dist.pgf(child.closed_form_bias(leaf_bias)),
            CoinExpr::Exponentiate(lambda, child) => {
                (lambda * (child.closed_form_bias(leaf_bias) - 1.0)).exp()
            }
            CoinExpr::Average(left, right) => {
                0.5 * (left.closed_form_bias(leaf_bias) + right.closed_form_bias(leaf_bias))
            }
            CoinExpr::Add { left, right, .. } => {
                left.closed_form_bias(leaf_bias) + right.closed_form_bias(leaf_bias)
            }
            CoinExpr::Affine { weight, shift, child } => {
                weight * child.closed_form_bias(leaf_bias) + shift
            }
        }
    }

    /// Declared slack preconditions on node children, as
    /// `(required_upper_bound, node_name)` pairs evaluated against the
    /// closed-form child bias, so a harness can check them.
    pub fn check_preconditions(&self, leaf_bias: &dyn Fn(SourceId) -> f64) -> Vec<String> {
        let mut violations = Vec::new();
        self.walk_preconditions(leaf_bias, &mut violations);
        violations
    }

    fn walk_preconditions(&self, leaf_bias: &dyn Fn(SourceId) -> f64, out: &mut Vec<String>) {
        match self {
            CoinExpr::Leaf(_) | CoinExpr::FromValues(_) | CoinExpr::Const(_) => {}
            CoinExpr::Scale(_, c) | CoinExpr::Complement(c) => {
                c.walk_preconditions(leaf_bias, out)
            }
            CoinExpr::Double { slack, child } => {
                let p = child.closed_form_bias(leaf_bias);
                if p > 0.5 - slack + 1e-12 {
                    out.push(format!("double: child bias {p} exceeds 1/2 - {slack}"));
                }
                child.walk_preconditions(leaf_bias, out);
            }
            CoinExpr::Pgf(_, c) | CoinExpr::Exponentiate(_, c) => {
                c.walk_preconditions(leaf_bias, out)
            }
            CoinExpr::Average(a, b) => {
                a.walk_preconditions(leaf_bias, out);
                b.walk_preconditions(leaf_bias, out);
            }
            CoinExpr::Add { slack, left, right } => {
                let p = left.closed_form_bias(leaf_bias) + right.closed_form_bias(leaf_bias);
                if p > 1.0 - slack + 1e-12 {
                    out.push(format!("add: bias sum {p} exceeds 1 - {slack}"));
                }
                left.walk_preconditions(leaf_bias, out);
                right.walk_preconditions(leaf_bias, out);
            }
            CoinExpr::Affine { child, .. } => child.walk_preconditions(leaf_bias, out),
        }
    }
}

fn flip_all_heads(child: &CoinExpr, k: u64, s: &mut Session) -> Result<bool> {
    // Draws exactly k samples (the empty product is heads). No short-circuit:
    // the per-flip draw count is the index count itself.
    let mut all = true;
    for _ in 0..k {
        if !child.flip(s)? {
            all = false;
        }
    }
    Ok(all)
}

/// Coin with bias `2p` from a `p`-coin, for `p ≤ 1/2 − delta`.
///
/// Linear Bernoulli factory in the gambler's-ruin form: a logistic
/// sub-factory turns the child into a `cp/(1+cp)`-coin driving a random walk
/// from state 1 that outputs heads on hitting 0, which happens with
/// probability exactly `(cp)^i` from state `i`. Whenever the walk drifts up
/// to a threshold the factor `c` is raised by `β` and the output is thinned
/// by `β^{−i}`, which preserves the hitting probability identity while
/// keeping the expected flip count at `O(1/delta)`.
fn flip_doubled(
    child: &mut dyn FnMut(&mut Session) -> Result<bool>,
    delta: f64,
    s: &mut Session,
) -> Result<bool> {
    debug_assert!(delta > 0.0);
    let mut c = 2.0f64;
    let mut eps = (2.0 * delta).min(0.9); // slack on the c·p scale
    let mut threshold = (4.6 / eps).ceil() as u64;
    let mut i: u64 = 1;
    loop {
        while i > 0 && i < threshold {
            // Logistic coin: heads with probability c·p/(1 + c·p).
            let heads = loop {
                if !s.rng().bernoulli(c / (c + 1.0)) {
                    break false;
                }
                if child(s)? {
                    break true;
                }
            };
            if heads {
                i -= 1;
            } else {
                i += 1;
            }
        }
        if i == 0 {
            return Ok(true);
        }
        // Thin by β^{−i} and continue with factor β·c.
        let beta = 1.0 + eps / 2.0;
        let keep = beta.powi(-(i.min(i32::MAX as u64) as i32));
        if !s.rng().bernoulli(keep) {
            return Ok(false);
        }
        c *= beta;
        eps *= 0.5;
        threshold = threshold.saturating_mul(2);
    }
}

/// Poisson sample: sequential inversion for small rates, logistic-envelope
/// rejection for large ones.
pub fn poisson(lambda: f64, rng: &mut Stream) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda <= 30.0 {
        poisson_inversion(lambda, rng)
    } else {
        poisson_rejection(lambda, rng)
    }
}

fn poisson_inversion(lambda: f64, rng: &mut Stream) -> u64 {
    let u = rng.f64();
    let mut pmf = (-lambda).exp();
    let mut cdf = pmf;
    let mut k = 0u64;
    while u > cdf {
        k += 1;
        pmf *= lambda / k as f64;
        cdf += pmf;
        if k > 600 {
            break; // tail mass below f64 resolution
        }
    }
    k
}

fn poisson_rejection(lambda: f64, rng: &mut Stream) -> u64 {
    use statrs::function::gamma::ln_gamma;
    let beta = std::f64::consts::PI / (3.0 * lambda).sqrt();
    let alpha = beta * lambda;
    let c = 0.767 - 3.36 / lambda;
    let k = c.ln() - lambda - beta.ln();
    loop {
        let u = rng.f64();
        if u <= 0.0 || u >= 1.0 {
            continue;
        }
        let x = (alpha - ((1.0 - u) / u).ln()) / beta;
        let n = (x + 0.5).floor();
        if n < 0.0 {
            continue;
        }
        let v = rng.f64();
        if v <= 0.0 {
            continue;
        }
        let y = alpha - beta * x;
        let lhs = y + (v / (1.0 + y.exp()).powi(2)).ln();
        let rhs = k + n * lambda.ln() - ln_gamma(n + 1.0);
        if lhs <= rhs {
            return n as u64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RandomSeed, SampleBudget, SourceRegistry, Stream};
    use crate::verify::sources::SyntheticCoin;

    fn session(seed: u64) -> Session {
        Session::new(Stream::root(RandomSeed(seed)), SampleBudget::UNLIMITED)
    }

    fn empirical_bias(expr: &CoinExpr, flips: u64, s: &mut Session) -> f64 {
        let mut heads = 0u64;
        for _ in 0..flips {
            if expr.flip(s).unwrap() {
                heads += 1;
            }
        }
        heads as f64 / flips as f64
    }

    fn assert_within_sigma(expr: &CoinExpr, target: f64, flips: u64, sigmas: f64, seed: u64) {
        let mut s = session(seed);
        let got = empirical_bias(expr, flips, &mut s);
        let sigma = (target * (1.0 - target) / flips as f64).sqrt().max(1e-9);
        assert!(
            (got - target).abs() <= sigmas * sigma,
            "empirical {got} vs target {target} ({} sigmas)",
            (got - target).abs() / sigma
        );
    }

    #[test]
    fn scale_bias_and_cost() {
        let mut reg = SourceRegistry::new();
        let coin = SyntheticCoin::register(&mut reg, "A", 0.6);
        let expr = CoinExpr::scale(0.5, CoinExpr::leaf(&coin)).unwrap();
        assert_eq!(expr.closed_form_bias(&|_| 0.6), 0.3);
        let mut s = session(11);
        let n = 50_000;
        let got = empirical_bias(&expr, n, &mut s);
        assert!((got - 0.3).abs() < 4.0 * (0.3f64 * 0.7 / n as f64).sqrt());
        // exactly one base draw per flip
        assert_eq!(s.ledger.total(), n);
    }

    #[test]
    fn scale_degenerate_params() {
        let mut reg = SourceRegistry::new();
        let coin = SyntheticCoin::register(&mut reg, "A", 0.6);
        let zero = CoinExpr::scale(0.0, CoinExpr::leaf(&coin)).unwrap();
        let one = CoinExpr::scale(1.0, CoinExpr::leaf(&coin)).unwrap();
        let mut s = session(2);
        for _ in 0..200 {
            assert!(!zero.flip(&mut s).unwrap());
        }
        assert_within_sigma(&one, 0.6, 50_000, 4.0, 3);
        assert!(CoinExpr::scale(1.5, CoinExpr::leaf(&coin)).is_err());
    }

    #[test]
    fn complement_bias() {
        let mut reg = SourceRegistry::new();
        let coin = SyntheticCoin::register(&mut reg, "A", 0.3);
        let expr = CoinExpr::complement(CoinExpr::leaf(&coin));
        assert_within_sigma(&expr, 0.7, 50_000, 4.0, 5);
        let heads = SyntheticCoin::register(&mut reg, "H", 1.0);
        let mut s = session(1);
        for _ in 0..100 {
            assert!(!CoinExpr::complement(CoinExpr::leaf(&heads))
                .flip(&mut s)
                .unwrap());
        }
    }

    #[test]
    fn double_bias_grid() {
        let mut reg = SourceRegistry::new();
        for (seed, (p, delta)) in [(0.0, 0.1), (0.25, 0.1), (0.4, 0.05), (0.45, 0.05)]
            .into_iter()
            .enumerate()
        {
            let coin = SyntheticCoin::register(&mut reg, format!("p{seed}"), p);
            let expr = CoinExpr::double(CoinExpr::leaf(&coin), delta).unwrap();
            assert_within_sigma(&expr, 2.0 * p, 40_000, 4.5, seed as u64 + 100);
        }
        let coin = SyntheticCoin::register(&mut reg, "x", 0.2);
        assert!(CoinExpr::double(CoinExpr::leaf(&coin), 0.0).is_err());
    }

    #[test]
    fn double_cost_scales_inversely_with_slack() {
        let mut reg = SourceRegistry::new();
        let coin = SyntheticCoin::register(&mut reg, "A", 0.25);
        let cost = |delta: f64, seed: u64| {
            let expr = CoinExpr::double(CoinExpr::leaf(&coin), delta).unwrap();
            let mut s = session(seed);
            let n = 20_000;
            for _ in 0..n {
                expr.flip(&mut s).unwrap();
            }
            s.ledger.total() as f64 / n as f64
        };
        let at_01 = cost(0.1, 7);
        let at_005 = cost(0.05, 8);
        assert!(
            at_005 <= 3.0 * at_01,
            "halving slack tripled cost: {at_01} -> {at_005}"
        );
    }

    #[test]
    fn pgf_examples() {
        let mut reg = SourceRegistry::new();
        let coin = SyntheticCoin::register(&mut reg, "A", 0.7);
        // K == 0: empty product is heads.
        let always = CoinExpr::pgf(IntDist::Const(0), CoinExpr::leaf(&coin));
        let mut s = session(4);
        for _ in 0..100 {
            assert!(always.flip(&mut s).unwrap());
        }
        // K == 2: bias p².
        let sq = CoinExpr::pgf(IntDist::Const(2), CoinExpr::leaf(&coin));
        assert_within_sigma(&sq, 0.49, 50_000, 4.0, 12);
        // Poisson index count reproduces exponentiation.
        let pois = CoinExpr::pgf(IntDist::Poisson(2.0), CoinExpr::leaf(&coin));
        assert!((pois.closed_form_bias(&|_| 0.7) - (2.0f64 * (0.7 - 1.0)).exp()).abs() < 1e-15);
    }

    #[test]
    fn pgf_mean_draw_count() {
        let mut reg = SourceRegistry::new();
        let coin = SyntheticCoin::register(&mut reg, "A", 0.5);
        let expr = CoinExpr::pgf(IntDist::Poisson(3.0), CoinExpr::leaf(&coin));
        let mut s = session(13);
        let n = 50_000u64;
        for _ in 0..n {
            expr.flip(&mut s).unwrap();
        }
        let mean = s.ledger.total() as f64 / n as f64;
        assert!((mean - 3.0).abs() / 3.0 < 0.05, "mean draws {mean}");
    }

    #[test]
    fn exponentiate_examples() {
        let mut reg = SourceRegistry::new();
        let half = SyntheticCoin::register(&mut reg, "A", 0.5);
        let expr = CoinExpr::exponentiate(2.0, CoinExpr::leaf(&half)).unwrap();
        assert_within_sigma(&expr, (-1.0f64).exp(), 60_000, 4.5, 21);

        let heads = SyntheticCoin::register(&mut reg, "H", 1.0);
        let mut s = session(5);
        let sure = CoinExpr::exponentiate(7.0, CoinExpr::leaf(&heads)).unwrap();
        for _ in 0..100 {
            assert!(sure.flip(&mut s).unwrap());
        }
        let zero_rate = CoinExpr::exponentiate(0.0, CoinExpr::leaf(&half)).unwrap();
        for _ in 0..100 {
            assert!(zero_rate.flip(&mut s).unwrap());
        }
        assert!(CoinExpr::exponentiate(-1.0, CoinExpr::leaf(&half)).is_err());
    }

    #[test]
    fn average_bias_and_cost() {
        let mut reg = SourceRegistry::new();
        let a = SyntheticCoin::register(&mut reg, "A", 0.2);
        let b = SyntheticCoin::register(&mut reg, "B", 0.6);
        let expr = CoinExpr::average(CoinExpr::leaf(&a), CoinExpr::leaf(&b));
        let mut s = session(6);
        let n = 50_000;
        let got = empirical_bias(&expr, n, &mut s);
        assert!((got - 0.4).abs() < 4.0 * (0.4f64 * 0.6 / n as f64).sqrt());
        assert_eq!(s.ledger.total(), n); // one draw from exactly one child
    }

    #[test]
    fn add_bias() {
        let mut reg = SourceRegistry::new();
        let a = SyntheticCoin::register(&mut reg, "A", 0.3);
        let b = SyntheticCoin::register(&mut reg, "B", 0.4);
        let expr = CoinExpr::add(CoinExpr::leaf(&a), CoinExpr::leaf(&b), 0.1).unwrap();
        assert_within_sigma(&expr, 0.7, 40_000, 4.5, 31);

        let c = SyntheticCoin::register(&mut reg, "C", 0.1);
        let d = SyntheticCoin::register(&mut reg, "D", 0.1);
        let expr = CoinExpr::add(CoinExpr::leaf(&c), CoinExpr::leaf(&d), 0.5).unwrap();
        assert_within_sigma(&expr, 0.2, 40_000, 4.5, 32);
        assert!(CoinExpr::add(CoinExpr::leaf(&c), CoinExpr::leaf(&d), -0.1).is_err());
    }

    #[test]
    fn affine_bias_and_bounds() {
        let mut reg = SourceRegistry::new();
        let coin = SyntheticCoin::register(&mut reg, "A", 0.6);
        let expr = CoinExpr::affine(0.5, 0.3, CoinExpr::leaf(&coin)).unwrap();
        assert!((expr.closed_form_bias(&|_| 0.6) - 0.6).abs() < 1e-15);
        assert_within_sigma(&expr, 0.6, 50_000, 4.0, 41);
        assert!(CoinExpr::affine(0.8, 0.3, CoinExpr::leaf(&coin)).is_err());
        assert!(CoinExpr::affine(-0.1, 0.3, CoinExpr::leaf(&coin)).is_err());
    }

    #[test]
    fn budget_propagates_through_combinators() {
        let mut reg = SourceRegistry::new();
        let a = SyntheticCoin::register(&mut reg, "A", 0.49);
        let expr = CoinExpr::double(CoinExpr::leaf(&a), 0.01).unwrap();
        let mut s = Session::new(Stream::root(RandomSeed(1)), SampleBudget::limited(50));
        let mut saw_budget_error = false;
        for _ in 0..10_000 {
            match expr.flip(&mut s) {
                Ok(_) => {}
                Err(Error::BudgetExceeded { .. }) => {
                    saw_budget_error = true;
                    break;
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(saw_budget_error);
    }

    #[test]
    fn precondition_reporting() {
        let mut reg = SourceRegistry::new();
        let a = SyntheticCoin::register(&mut reg, "A", 0.48);
        let ok = CoinExpr::double(CoinExpr::leaf(&a), 0.01).unwrap();
        assert!(ok.check_preconditions(&|_| 0.48).is_empty());
        let bad = CoinExpr::double(CoinExpr::leaf(&a), 0.1).unwrap();
        assert_eq!(bad.check_preconditions(&|_| 0.48).len(), 1);
    }

    #[test]
    fn poisson_inversion_moments() {
        let mut rng = Stream::root(RandomSeed(77));
        let lambda = 4.5;
        let n = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let k = poisson(lambda, &mut rng) as f64;
            sum += k;
            sumsq += k * k;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!((mean - lambda).abs() < 0.03, "mean {mean}");
        assert!((var - lambda).abs() < 0.12, "var {var}");
    }

    #[test]
    fn poisson_rejection_matches_pmf() {
        use statrs::function::gamma::ln_gamma;
        let mut rng = Stream::root(RandomSeed(78));
        let lambda = 45.0;
        let n = 100_000usize;
        let lo = 10usize;
        let hi = 90usize;
        let mut counts = vec![0u64; hi - lo + 2];
        for _ in 0..n {
            let k = poisson(lambda, &mut rng) as usize;
            let bin = k.clamp(lo, hi + 1) - lo;
            counts[bin] += 1;
        }
        let mut probs = vec![0.0f64; hi - lo + 2];
        for k in lo..=hi {
            probs[k - lo] =
                (k as f64 * lambda.ln() - lambda - ln_gamma(k as f64 + 1.0)).exp();
        }
        probs[hi - lo + 1] = 1.0 - probs.iter().sum::<f64>();
        // Pearson statistic with generous threshold; bins pooled by construction.
        let mut chi2 = 0.0;
        for (c, p) in counts.iter().zip(&probs) {
            if *p > 1e-12 {
                let expected = p * n as f64;
                chi2 += (*c as f64 - expected).powi(2) / expected;
            }
        }
        // df ~ 81; 1e-4 quantile is ~ 140.
        assert!(chi2 < 150.0, "chi2 {chi2}");
    }
}
