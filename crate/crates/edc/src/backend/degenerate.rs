//! Degenerate backends with exactly known entropy behaviour.
//!
//! Uniform predicts every token equally regardless of context, so every
//! profiled quantity equals `log₂ V` and the uncertainty index is 1.
//! Delta concentrates all mass on one target token, driving conditional
//! entropy to (numerically) zero. Both serve as closed-form oracles for
//! the full pipeline.

use crate::backend::{
    check_context, Backend, BackendDescriptor, BackendError, BackendKind, LogitsVector, ScoreKind,
    TokenId, TokenSequence,
};
use crate::Real;

fn byte_tokenize(text: &str, vocab_size: u32) -> Result<TokenSequence, BackendError> {
    let mut tokens = Vec::with_capacity(text.len());
    for b in text.bytes() {
        let id = TokenId::from(b);
        if id >= vocab_size {
            return Err(BackendError::InvalidToken { id, vocab_size });
        }
        tokens.push(id);
    }
    Ok(TokenSequence(tokens))
}

/// Same score for every token: softmax yields the uniform distribution.
pub struct UniformBackend {
    descriptor: BackendDescriptor,
}

impl UniformBackend {
    pub fn new(vocab_size: u32) -> Self {
        assert!(vocab_size >= 2, "vocab_size must be at least 2");
        Self {
            descriptor: BackendDescriptor {
                name: format!("uniform-{vocab_size}"),
                vocab_size,
                kind: BackendKind::Uniform,
                tokenizer_id: "byte".to_string(),
                score_kind: ScoreKind::Logits,
                context_limit: None,
                concurrent: true,
            },
        }
    }
}

impl Backend for UniformBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, BackendError> {
        byte_tokenize(text, self.descriptor.vocab_size)
    }

    fn evaluate(&self, context: &[TokenId]) -> Result<LogitsVector, BackendError> {
        check_context(&self.descriptor, context)?;
        Ok(LogitsVector::new(vec![
            0.0;
            self.descriptor.vocab_size as usize
        ]))
    }
}

/// How a [`DeltaBackend`] picks its target token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaTarget {
    /// Always the same token; the mean distribution degenerates to the
    /// same near-delta and the uncertainty index becomes undefined.
    Fixed(TokenId),
    /// The final context token; sliding windows then place their mass on
    /// different targets and the mean distribution spreads out.
    EchoLast,
}

/// Puts (numerically) all probability mass on a single target token,
/// using a finite logit gap sized so the softmax tail mass stays below
/// 1e-12 for any vocabulary.
pub struct DeltaBackend {
    descriptor: BackendDescriptor,
    target: DeltaTarget,
    gap: Real,
}

impl DeltaBackend {
    pub fn new(vocab_size: u32, target: DeltaTarget) -> Self {
        if let DeltaTarget::Fixed(id) = target {
            assert!(id < vocab_size, "target token outside vocabulary");
        }
        // tail mass ≈ V·exp(-gap); ln V + 40 keeps it near exp(-40) ≈ 4e-18
        let gap = (vocab_size as Real).ln() + 40.0;
        Self {
            descriptor: BackendDescriptor {
                name: match target {
                    DeltaTarget::Fixed(id) => format!("delta-{vocab_size}-fixed{id}"),
                    DeltaTarget::EchoLast => format!("delta-{vocab_size}-echo"),
                },
                vocab_size,
                kind: BackendKind::Delta,
                tokenizer_id: "byte".to_string(),
                score_kind: ScoreKind::Logits,
                context_limit: None,
                concurrent: true,
            },
            target,
            gap,
        }
    }
}

impl Backend for DeltaBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, BackendError> {
        byte_tokenize(text, self.descriptor.vocab_size)
    }

    fn evaluate(&self, context: &[TokenId]) -> Result<LogitsVector, BackendError> {
        check_context(&self.descriptor, context)?;
        let target = match self.target {
            DeltaTarget::Fixed(id) => id,
            DeltaTarget::EchoLast => *context.last().expect("checked non-empty"),
        };
        let mut values = vec![0.0; self.descriptor.vocab_size as usize];
        values[target as usize] = self.gap;
        Ok(LogitsVector::new(values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::next_token_distribution;
    use crate::entropy::{entropy_bits, softmax_stable};

    #[test]
    fn uniform_logits_are_all_zero() {
        let backend = UniformBackend::new(8);
        let logits = backend.evaluate(&[1, 2, 3]).unwrap();
        assert_eq!(logits.values, vec![0.0; 8]);
        let p = softmax_stable(logits.values).unwrap();
        assert!(p.probs().iter().all(|&x| x == 0.125));
    }

    #[test]
    fn delta_mass_concentrates_beyond_tolerance() {
        let backend = DeltaBackend::new(256, DeltaTarget::Fixed(7));
        let p = next_token_distribution(&backend, &[0]).unwrap();
        assert!(p.probs()[7] > 1.0 - 1e-12);
        assert!(entropy_bits(&p).bits() < 1e-10);
    }

    #[test]
    fn delta_echo_follows_last_context_token() {
        let backend = DeltaBackend::new(64, DeltaTarget::EchoLast);
        let p = next_token_distribution(&backend, &[5, 9]).unwrap();
        assert!(p.probs()[9] > 1.0 - 1e-12);
        let q = next_token_distribution(&backend, &[9, 5]).unwrap();
        assert!(q.probs()[5] > 1.0 - 1e-12);
    }

    #[test]
    fn delta_stays_concentrated_for_large_vocabularies() {
        let backend = DeltaBackend::new(128_256, DeltaTarget::Fixed(0));
        let p = next_token_distribution(&backend, &[1]).unwrap();
        assert!(p.probs()[0] > 1.0 - 1e-12);
    }
}
