//! Disagreement combinatorics for a bank of `k` classifiers over `c`
//! categories, plus empirical disagreement estimates for trained banks.
//!
//! The disagreement ratio `P(c, k)` is the fraction of label tuples in
//! `[0, c)^k` whose entries are pairwise distinct. Beyond `k = c` no tuple
//! can add new disagreement, so the effective head count saturates at
//! `min(k, c)`: `P(c, k) = P(c, c)` for `k >= c`. Ratios are kept as exact
//! integers (falling factorial over a power) and only rendered to `f64`
//! for display.

use crate::error::SfdaError;
use crate::Result;
use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// An exact disagreement ratio `numerator / denominator` with its `f64`
/// rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioResult {
    pub c: usize,
    pub k: usize,
    pub numerator: BigUint,
    pub denominator: BigUint,
    pub value: f64,
}

impl RatioResult {
    /// Exact rational form of the ratio.
    pub fn as_rational(&self) -> BigRational {
        BigRational::new(
            self.numerator.clone().into(),
            self.denominator.clone().into(),
        )
    }
}

fn validate_ck(c: usize, k: usize) -> Result<()> {
    if c < 2 || k < 2 {
        return Err(SfdaError::InvalidConfig(format!(
            "need c >= 2 and k >= 2, got c={c}, k={k}"
        )));
    }
    Ok(())
}

/// Ratio of f64s computed factor-by-factor so huge integers never get
/// converted: `prod_{i=0}^{m-1} (c - i) / c`.
fn falling_ratio_f64(c: usize, m: usize) -> f64 {
    (0..m).map(|i| (c - i) as f64 / c as f64).product()
}

/// Exact disagreement ratio `P(c, k) = A(c, m) / c^m` with `m = min(k, c)`,
/// where `A(c, m)` is the falling factorial `c (c-1) ... (c-m+1)`.
pub fn disagreement_ratio_exact(c: usize, k: usize) -> Result<RatioResult> {
    validate_ck(c, k)?;
    let m = k.min(c);
    let mut numerator = BigUint::one();
    for i in 0..m {
        numerator *= BigUint::from(c - i);
    }
    let denominator = BigUint::from(c).pow(m as u32);
    Ok(RatioResult {
        c,
        k,
        numerator,
        denominator,
        value: falling_ratio_f64(c, m),
    })
}

/// Enumeration bound for the brute-force oracle.
pub const BRUTE_FORCE_BOUND: u128 = 10_000_000;

/// Brute-force oracle for [`disagreement_ratio_exact`]: enumerate every
/// label tuple of the effective head count `min(k, c)` and count the tuples
/// whose labels are pairwise distinct. Rejects instances with more than
/// [`BRUTE_FORCE_BOUND`] tuples.
pub fn disagreement_ratio_bruteforce(c: usize, k: usize) -> Result<RatioResult> {
    validate_ck(c, k)?;
    let m = k.min(c);
    let total = (c as u128).pow(m as u32);
    if total > BRUTE_FORCE_BOUND {
        return Err(SfdaError::EnumerationTooLarge {
            actual: total,
            bound: BRUTE_FORCE_BOUND,
        });
    }
    let mut tuple = vec![0usize; m];
    let mut count: u64 = 0;
    let mut remaining = total;
    loop {
        let mut seen = vec![false; c];
        let distinct = tuple.iter().all(|&l| {
            if seen[l] {
                false
            } else {
                seen[l] = true;
                true
            }
        });
        if distinct {
            count += 1;
        }
        remaining -= 1;
        if remaining == 0 {
            break;
        }
        // odometer increment
        for d in (0..m).rev() {
            tuple[d] += 1;
            if tuple[d] < c {
                break;
            }
            tuple[d] = 0;
        }
    }
    let numerator = BigUint::from(count);
    let denominator = BigUint::from(total);
    let value = count as f64 / total as f64;
    Ok(RatioResult {
        c,
        k,
        numerator,
        denominator,
        value,
    })
}

/// One row of [`ratio_recurrence_check`].
#[derive(Debug, Clone)]
pub struct RecurrenceEntry {
    pub k: usize,
    /// Exact quotient `P(c, k) / P(c, k-1)`.
    pub quotient: BigRational,
    /// Closed form `(c - k + 1) / c` for `k <= c`, and 1 beyond.
    pub expected: BigRational,
}

impl RecurrenceEntry {
    pub fn matches(&self) -> bool {
        self.quotient == self.expected
    }
}

/// Exact quotients `P(c, k) / P(c, k-1)` for `k = 3..=c+1`. For `k <= c`
/// the quotient equals `(c - k + 1) / c`; at `k = c + 1` it is exactly 1
/// (saturation).
pub fn ratio_recurrence_check(c: usize) -> Result<Vec<RecurrenceEntry>> {
    if c < 2 {
        return Err(SfdaError::InvalidConfig(format!("need c >= 2, got {c}")));
    }
    let mut out = Vec::new();
    for k in 3..=(c + 1) {
        let pk = disagreement_ratio_exact(c, k)?.as_rational();
        let pk1 = disagreement_ratio_exact(c, k - 1)?.as_rational();
        let quotient = pk / pk1;
        let expected = if k <= c {
            BigRational::new(BigUint::from(c - k + 1).into(), BigUint::from(c).into())
        } else {
            BigRational::one()
        };
        out.push(RecurrenceEntry {
            k,
            quotient,
            expected,
        });
    }
    Ok(out)
}

/// Per-head argmax labels over a dataset: `n` rows of `k` labels each.
#[derive(Debug, Clone)]
pub struct DisagreementSample {
    labels: Vec<Vec<usize>>,
    c: usize,
}

impl DisagreementSample {
    pub fn new(labels: Vec<Vec<usize>>, c: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(SfdaError::InvalidConfig(
                "disagreement sample needs at least one row".into(),
            ));
        }
        let k = labels[0].len();
        if k < 2 {
            return Err(SfdaError::InvalidConfig(
                "disagreement sample needs at least two heads".into(),
            ));
        }
        for row in &labels {
            if row.len() != k {
                return Err(SfdaError::InvalidConfig(
                    "ragged disagreement sample".into(),
                ));
            }
            for &l in row {
                if l >= c {
                    return Err(SfdaError::LabelOutOfRange {
                        label: l,
                        classes: c,
                    });
                }
            }
        }
        Ok(DisagreementSample { labels, c })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.labels[0].len()
    }

    pub fn c(&self) -> usize {
        self.c
    }
}

/// Mean over samples of the fraction of head pairs that disagree, in
/// `[0, 1]`.
pub fn empirical_disagreement(sample: &DisagreementSample) -> f64 {
    let k = sample.k();
    let n_pairs = (k * (k - 1) / 2) as f64;
    let mut total = 0.0;
    for row in &sample.labels {
        let mut disagreeing = 0usize;
        for i in 0..k {
            for j in (i + 1)..k {
                if row[i] != row[j] {
                    disagreeing += 1;
                }
            }
        }
        total += disagreeing as f64 / n_pairs;
    }
    total / sample.n() as f64
}

/// Divergence attained by a fixed trained bank: `2 * |eps_S - eps_T|`.
/// This is a lower bound on the supremum over the hypothesis space, not the
/// supremum itself; it is symmetric in its arguments and lies in `[0, 2]`.
pub fn divergence_estimate(source: &DisagreementSample, target: &DisagreementSample) -> f64 {
    2.0 * (empirical_disagreement(source) - empirical_disagreement(target)).abs()
}

/// Monte Carlo estimate of the all-distinct fraction over `[0, c)^k`.
/// Deterministic for a given seed; converges to
/// `disagreement_ratio_exact(c, k)` when `k <= c` (for `k > c` the
/// all-distinct fraction is zero rather than the saturated ratio).
pub fn montecarlo_random_bank_ratio(c: usize, k: usize, n_samples: usize, seed: u64) -> f64 {
    assert!(n_samples >= 1, "need at least one sample");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut seen = vec![false; c];
    for _ in 0..n_samples {
        seen.iter_mut().for_each(|s| *s = false);
        let mut distinct = true;
        for _ in 0..k {
            let l = rng.gen_range(0..c);
            if seen[l] {
                distinct = false;
                // keep drawing so the stream position is label-count
                // independent of early exits
            }
            seen[l] = true;
        }
        if distinct {
            hits += 1;
        }
    }
    hits as f64 / n_samples as f64
}

/// Render a big rational to f64 for display (used by the CLI table).
pub fn rational_to_f64(r: &BigRational) -> f64 {
    // numer/denom may exceed f64 range individually; divide in stages
    let n = r.numer();
    let d = r.denom();
    if n.is_zero() {
        return 0.0;
    }
    match (n.to_f64(), d.to_f64()) {
        (Some(nf), Some(df)) if nf.is_finite() && df.is_finite() => nf / df,
        _ => {
            // fall back to a digit-limited quotient
            let scale = BigUint::from(10u64).pow(17);
            let q = (n.to_biguint().unwrap() * &scale) / d.to_biguint().unwrap();
            q.to_f64().unwrap_or(f64::NAN) / 1e17
        }
    }
}
