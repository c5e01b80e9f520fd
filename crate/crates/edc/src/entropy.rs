//! Information-theoretic core: stable softmax, Shannon entropy in bits,
//! streaming means of probability vectors, the uncertainty index, and the
//! information gain span.
//!
//! All quantities are defined over a next-token distribution `p` on a
//! vocabulary of size `V`:
//!
//! ```text
//! softmax(z)_i = exp(z_i - max z) / Σ_j exp(z_j - max z)
//! H(p)         = -Σ_i p_i log₂ p_i          (0·log 0 = 0)
//! u            = h / H                      (clamped to [0, 1])
//! igs          = u_small · (1 - u_large)
//! ```
//!
//! `h` here is an average of per-context entropies and `H` the entropy of
//! the averaged distribution, so concavity of `H` guarantees `h ≤ H`. A
//! violation beyond [`JENSEN_TOLERANCE_BITS`] can only come from broken
//! arithmetic and is reported as a hard error rather than clamped away.
//!
//! Entropy sums use natural-log terms internally and convert to bits once
//! at the end.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::scalar::Scalar;

/// `h` may exceed `H` by at most this many bits before the pair is
/// rejected as a computation bug.
pub const JENSEN_TOLERANCE_BITS: f64 = 1e-6;

/// Below this many bits, `H` is treated as zero and the ratio `h/H` is
/// reported as [`Uncertainty::Undefined`] instead of a number.
pub const UNDEFINED_ENTROPY_FLOOR_BITS: f64 = 1e-9;

/// Sum tolerance accepted by [`PredictiveDistribution::renormalized`];
/// loose enough to absorb float32 quantization of a full vocabulary.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum EntropyError {
    #[error("non-finite input at index {index}")]
    NonFiniteInput { index: usize },
    #[error("invalid distribution: {reason}")]
    InvalidDistribution { reason: String },
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("Jensen violation: h = {h} bits exceeds H = {big_h} bits beyond tolerance")]
    JensenViolation { h: f64, big_h: f64 },
    #[error("argument out of range: {name} = {value}, expected [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("accumulator holds no distributions")]
    EmptyAccumulator,
}

/// A probability vector over a vocabulary: entries non-negative, summing
/// to one within the scalar's tolerance. Construction is the validation
/// boundary; everything downstream may assume the invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution<S> {
    probs: Vec<S>,
}

impl<S: Scalar> PredictiveDistribution<S> {
    /// Wraps an already-normalized probability vector, verifying the
    /// invariant without altering the values.
    pub fn new(probs: Vec<S>) -> Result<Self, EntropyError> {
        Self::validate(&probs, S::sum_tolerance())?;
        Ok(Self { probs })
    }

    /// Wraps a probability vector that may carry quantization error
    /// (e.g. float32 round-trips), dividing by the observed sum so the
    /// invariant holds exactly. Rejects input whose sum strays beyond
    /// [`RENORMALIZE_TOLERANCE`].
    pub fn renormalized(mut probs: Vec<S>) -> Result<Self, EntropyError> {
        let sum = Self::validate(&probs, S::from_f64(RENORMALIZE_TOLERANCE))?;
        for p in &mut probs {
            *p = *p / sum;
        }
        Ok(Self { probs })
    }

    fn validate(probs: &[S], tolerance: S) -> Result<S, EntropyError> {
        if probs.is_empty() {
            return Err(EntropyError::InvalidDistribution {
                reason: "empty vector".into(),
            });
        }
        let mut sum = S::zero();
        for (index, &p) in probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(EntropyError::NonFiniteInput { index });
            }
            if p < S::zero() {
                return Err(EntropyError::InvalidDistribution {
                    reason: format!("negative probability {p} at index {index}"),
                });
            }
            sum = sum + p;
        }
        if (sum - S::one()).abs() > tolerance {
            return Err(EntropyError::InvalidDistribution {
                reason: format!("sum {sum} deviates from 1 beyond tolerance {tolerance}"),
            });
        }
        Ok(sum)
    }

    pub fn probs(&self) -> &[S] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_probs(self) -> Vec<S> {
        self.probs
    }
}

/// Shannon entropy in bits. Always in `[0, log₂ V]` for a `V`-ary
/// distribution.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EntropyBits<S>(S);

impl<S: Scalar> EntropyBits<S> {
    pub fn new(bits: S) -> Self {
        Self(bits)
    }

    pub fn bits(self) -> S {
        self.0
    }
}

/// The ratio `h/H`, or the flagged degenerate case where `H` vanishes
/// (every context produced the same deterministic prediction) and the
/// ratio carries no information.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Uncertainty<S> {
    Defined(S),
    Undefined,
}

impl<S: Scalar> Uncertainty<S> {
    pub fn value(self) -> Option<S> {
        match self {
            Uncertainty::Defined(u) => Some(u),
            Uncertainty::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Uncertainty::Defined(_))
    }
}

impl<S: Serialize> Serialize for Uncertainty<S> {
    fn serialize<Ser: Serializer>(&self, serializer: Ser) -> Result<Ser::Ok, Ser::Error> {
        match self {
            Uncertainty::Defined(v) => serializer.serialize_some(v),
            Uncertainty::Undefined => serializer.serialize_none(),
        }
    }
}

impl<'de, S: Deserialize<'de>> Deserialize<'de> for Uncertainty<S> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(match Option::<S>::deserialize(deserializer)? {
            Some(v) => Uncertainty::Defined(v),
            None => Uncertainty::Undefined,
        })
    }
}

/// Numerically stable softmax. Consumes the score vector and reuses its
/// allocation, so a profiling worker holds at most one vocabulary-sized
/// buffer besides its accumulator.
pub fn softmax_stable<S: Scalar>(
    mut scores: Vec<S>,
) -> Result<PredictiveDistribution<S>, EntropyError> {
    if scores.is_empty() {
        return Err(EntropyError::InvalidDistribution {
            reason: "empty vector".into(),
        });
    }
    let mut max = S::neg_infinity();
    for (index, &z) in scores.iter().enumerate() {
        if !z.is_finite() {
            return Err(EntropyError::NonFiniteInput { index });
        }
        if z > max {
            max = z;
        }
    }
    let mut sum = S::zero();
    for z in &mut scores {
        *z = (*z - max).exp();
        sum = sum + *z;
    }
    for z in &mut scores {
        *z = *z / sum;
    }
    Ok(PredictiveDistribution { probs: scores })
}

/// Shannon entropy of a distribution in bits, with the `0·log 0 = 0`
/// convention (zero entries are skipped). Sums `-p ln p` and divides by
/// `ln 2` once.
pub fn entropy_bits<S: Scalar>(p: &PredictiveDistribution<S>) -> EntropyBits<S> {
    let mut nats = S::zero();
    for &prob in p.probs() {
        if prob > S::zero() {
            nats = nats - prob * prob.ln();
        }
    }
    let bits = nats / S::LN_2();
    // Entries infinitesimally above 1 (renormalization residue) can push
    // the sum a few ulps below zero.
    if bits < S::zero() {
        EntropyBits(S::zero())
    } else {
        EntropyBits(bits)
    }
}

/// Streaming elementwise mean over a set of distributions. Only the
/// running sum is retained, never the inputs, which is what keeps the
/// profiler's memory at one vocabulary-sized vector per worker.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanDistributionAccumulator<S> {
    running_sum: Vec<S>,
    count: u64,
}

impl<S: Scalar> MeanDistributionAccumulator<S> {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            running_sum: vec![S::zero(); vocab_size],
            count: 0,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Absorbs one distribution into the running sum.
    pub fn accumulate(&mut self, p: &PredictiveDistribution<S>) -> Result<(), EntropyError> {
        if p.len() != self.running_sum.len() {
            return Err(EntropyError::LengthMismatch {
                left: self.running_sum.len(),
                right: p.len(),
            });
        }
        for (acc, &prob) in self.running_sum.iter_mut().zip(p.probs()) {
            *acc = *acc + prob;
        }
        self.count += 1;
        Ok(())
    }

    /// Combines two partial accumulations; associative, so sharded
    /// profiling can merge worker results in a fixed order.
    pub fn merge(&mut self, other: &Self) -> Result<(), EntropyError> {
        if other.running_sum.len() != self.running_sum.len() {
            return Err(EntropyError::LengthMismatch {
                left: self.running_sum.len(),
                right: other.running_sum.len(),
            });
        }
        for (acc, &x) in self.running_sum.iter_mut().zip(&other.running_sum) {
            *acc = *acc + x;
        }
        self.count += other.count;
        Ok(())
    }

    /// The mean distribution over everything absorbed so far.
    pub fn finalize(&self) -> Result<PredictiveDistribution<S>, EntropyError> {
        if self.count == 0 {
            return Err(EntropyError::EmptyAccumulator);
        }
        let n = S::from_f64(self.count as f64);
        let mean: Vec<S> = self.running_sum.iter().map(|&s| s / n).collect();
        PredictiveDistribution::new(mean)
    }
}

/// The ratio `h/H`, clamped to `[0, 1]`.
///
/// `h > H` beyond [`JENSEN_TOLERANCE_BITS`] is impossible for a mean
/// entropy against the entropy of the mean, so it is rejected as a bug.
/// `H` below [`UNDEFINED_ENTROPY_FLOOR_BITS`] makes the ratio a 0/0
/// degeneracy, reported as [`Uncertainty::Undefined`].
pub fn uncertainty_index<S: Scalar>(
    h: EntropyBits<S>,
    big_h: EntropyBits<S>,
) -> Result<Uncertainty<S>, EntropyError> {
    let (h, big_h) = (h.bits(), big_h.bits());
    if h - big_h > S::from_f64(JENSEN_TOLERANCE_BITS) {
        return Err(EntropyError::JensenViolation {
            h: h.as_f64(),
            big_h: big_h.as_f64(),
        });
    }
    if big_h < S::from_f64(UNDEFINED_ENTROPY_FLOOR_BITS) {
        return Ok(Uncertainty::Undefined);
    }
    let ratio = h / big_h;
    Ok(Uncertainty::Defined(
        ratio.max(S::zero()).min(S::one()),
    ))
}

/// Information gain span: `u_small · (1 - u_large)`. Large when the
/// model starts uncertain and ends certain.
pub fn igs<S: Scalar>(u_small: S, u_large: S) -> Result<S, EntropyError> {
    for (name, value) in [("u_small", u_small), ("u_large", u_large)] {
        if !(value >= S::zero() && value <= S::one()) {
            return Err(EntropyError::OutOfRange {
                name,
                value: value.as_f64(),
            });
        }
    }
    Ok(u_small * (S::one() - u_large))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(probs: &[f64]) -> PredictiveDistribution<f64> {
        PredictiveDistribution::new(probs.to_vec()).unwrap()
    }

    #[test]
    fn softmax_symmetric_inputs() {
        let p = softmax_stable(vec![0.0_f64, 0.0]).unwrap();
        assert_eq!(p.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_large_inputs_do_not_overflow() {
        let p = softmax_stable(vec![1000.0_f64, 1000.0]).unwrap();
        assert_eq!(p.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_of_log_odds() {
        let p = softmax_stable(vec![1.0_f64.ln(), 3.0_f64.ln()]).unwrap();
        assert!((p.probs()[0] - 0.25).abs() < 1e-15);
        assert!((p.probs()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(
            softmax_stable(vec![0.0_f64, f64::NAN]),
            Err(EntropyError::NonFiniteInput { index: 1 })
        ));
        assert!(matches!(
            softmax_stable(vec![f64::INFINITY, 0.0]),
            Err(EntropyError::NonFiniteInput { index: 0 })
        ));
    }

    #[test]
    fn softmax_sums_to_one_tightly() {
        let scores: Vec<f64> = (0..4096).map(|i| (i % 37) as f64 * 0.25 - 3.0).collect();
        let p = softmax_stable(scores).unwrap();
        let sum: f64 = p.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12, "sum = {sum}");
    }

    #[test]
    fn entropy_of_uniform_eight_symbols() {
        let p = dist(&[0.125; 8]);
        assert!((entropy_bits(&p).bits() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_of_delta_is_zero() {
        let p = dist(&[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(entropy_bits(&p).bits(), 0.0);
    }

    #[test]
    fn entropy_skips_zero_entries() {
        let p = dist(&[0.5, 0.5, 0.0, 0.0]);
        assert!((entropy_bits(&p).bits() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn distribution_rejects_negative_and_bad_sums() {
        assert!(PredictiveDistribution::new(vec![1.1_f64, -0.1]).is_err());
        assert!(PredictiveDistribution::new(vec![0.6_f64, 0.6]).is_err());
        assert!(PredictiveDistribution::new(Vec::<f64>::new()).is_err());
    }

    #[test]
    fn renormalized_absorbs_quantization_error() {
        // A float32 round-trip of 1/3 does not sum back to 1 in f64.
        let third = (1.0_f64 / 3.0) as f32 as f64;
        let p = PredictiveDistribution::renormalized(vec![third; 3]).unwrap();
        let sum: f64 = p.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn accumulator_two_point_mean() {
        let mut acc = MeanDistributionAccumulator::new(2);
        acc.accumulate(&dist(&[1.0, 0.0])).unwrap();
        acc.accumulate(&dist(&[0.0, 1.0])).unwrap();
        assert_eq!(acc.finalize().unwrap().probs(), &[0.5, 0.5]);
    }

    #[test]
    fn accumulator_mean_of_constant_inputs() {
        let p = dist(&[0.2, 0.3, 0.5]);
        let mut acc = MeanDistributionAccumulator::new(3);
        for _ in 0..100 {
            acc.accumulate(&p).unwrap();
        }
        for (m, x) in acc.finalize().unwrap().probs().iter().zip(p.probs()) {
            assert!((m - x).abs() < 1e-12);
        }
    }

    #[test]
    fn accumulator_rejects_length_mismatch() {
        let mut acc = MeanDistributionAccumulator::new(3);
        assert!(matches!(
            acc.accumulate(&dist(&[0.5, 0.5])),
            Err(EntropyError::LengthMismatch { left: 3, right: 2 })
        ));
    }

    #[test]
    fn accumulator_empty_finalize_is_an_error() {
        let acc = MeanDistributionAccumulator::<f64>::new(4);
        assert_eq!(acc.finalize(), Err(EntropyError::EmptyAccumulator));
    }

    #[test]
    fn uncertainty_reproduces_reference_ratio() {
        let u = uncertainty_index(EntropyBits::new(11.2112), EntropyBits::new(13.5514)).unwrap();
        let v = u.value().unwrap();
        assert!((v - 0.8273).abs() < 0.00005, "u = {v}");
    }

    #[test]
    fn uncertainty_zero_numerator() {
        let u = uncertainty_index(EntropyBits::new(0.0), EntropyBits::new(5.0)).unwrap();
        assert_eq!(u, Uncertainty::Defined(0.0));
    }

    #[test]
    fn uncertainty_zero_over_zero_is_undefined() {
        let u = uncertainty_index(EntropyBits::new(0.0_f64), EntropyBits::new(0.0)).unwrap();
        assert_eq!(u, Uncertainty::Undefined);
    }

    #[test]
    fn uncertainty_flags_jensen_violation() {
        let err = uncertainty_index(EntropyBits::new(5.1_f64), EntropyBits::new(5.0)).unwrap_err();
        assert!(matches!(err, EntropyError::JensenViolation { .. }));
    }

    #[test]
    fn uncertainty_clamps_rounding_overshoot() {
        // h exceeding H inside the tolerance clamps to exactly 1.
        let u = uncertainty_index(EntropyBits::new(5.0 + 1e-9), EntropyBits::new(5.0)).unwrap();
        assert_eq!(u, Uncertainty::Defined(1.0));
    }

    #[test]
    fn igs_from_reference_inputs() {
        let v = igs(0.8669_f64, 0.0150).unwrap();
        assert!((v - 0.8539).abs() < 0.0001, "igs = {v}");
    }

    #[test]
    fn igs_extremes() {
        assert_eq!(igs(1.0_f64, 0.0).unwrap(), 1.0);
        assert_eq!(igs(0.0_f64, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn igs_rejects_out_of_range() {
        assert!(matches!(
            igs(1.5_f64, 0.0),
            Err(EntropyError::OutOfRange { name: "u_small", .. })
        ));
        assert!(matches!(
            igs(0.5_f64, -0.1),
            Err(EntropyError::OutOfRange { name: "u_large", .. })
        ));
    }

    #[test]
    fn generic_core_works_in_single_precision() {
        let p = softmax_stable(vec![0.0_f32, 0.0, 0.0, 0.0]).unwrap();
        assert!((entropy_bits(&p).bits() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn uncertainty_serializes_as_number_or_null() {
        let defined = Uncertainty::Defined(0.5_f64);
        assert_eq!(serde_json::to_string(&defined).unwrap(), "0.5");
        let undefined: Uncertainty<f64> = Uncertainty::Undefined;
        assert_eq!(serde_json::to_string(&undefined).unwrap(), "null");
        let back: Uncertainty<f64> = serde_json::from_str("null").unwrap();
        assert_eq!(back, Uncertainty::Undefined);
        let back: Uncertainty<f64> = serde_json::from_str("0.25").unwrap();
        assert_eq!(back, Uncertainty::Defined(0.25));
    }
}
