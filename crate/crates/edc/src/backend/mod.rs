//! Uniform abstraction over anything that maps a token context to a full
//! next-token distribution.
//!
//! Four families ship here: trained n-gram models (a desk-scale stand-in
//! for an LLM), replay of recorded sessions, a remote client speaking the
//! newline-delimited JSON protocol, and the degenerate uniform/delta
//! backends used as exact oracles in tests.

pub mod degenerate;
pub mod ngram;
pub mod remote;
pub mod replay;
pub mod wire;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::EntropyError;
use crate::Real;

pub use degenerate::{DeltaBackend, DeltaTarget, UniformBackend};
pub use ngram::{NGramBackend, NGramModel, NGramTokenizer};
pub use remote::RemoteBackend;
pub use replay::{read_session, record_session, ReplayBackend, SessionHeader};

/// Token identifier; always strictly less than the owning backend's
/// vocabulary size.
pub type TokenId = u32;

/// An ordered token context, as produced by a backend's tokenizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(pub Vec<TokenId>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.0
    }
}

impl std::ops::Deref for TokenSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(tokens: Vec<TokenId>) -> Self {
        Self(tokens)
    }
}

/// Per-vocabulary scores returned by [`Backend::evaluate`]: raw logits,
/// or probabilities when the backend's descriptor says
/// [`ScoreKind::Probs`]. Entries are always finite and `vocab_size` long.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsVector {
    pub values: Vec<Real>,
}

impl LogitsVector {
    pub fn new(values: Vec<Real>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How [`Backend::evaluate`] output is to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// Unnormalized scores; run them through the stable softmax.
    Logits,
    /// Already a probability vector; softmax is skipped.
    Probs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Ngram,
    Replay,
    Remote,
    Uniform,
    Delta,
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BackendKind::Ngram => "ngram",
            BackendKind::Replay => "replay",
            BackendKind::Remote => "remote",
            BackendKind::Uniform => "uniform",
            BackendKind::Delta => "delta",
        };
        f.write_str(s)
    }
}

/// Identity of a backend; pins the provenance of every profile computed
/// against it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub vocab_size: u32,
    pub kind: BackendKind,
    pub tokenizer_id: String,
    /// How evaluate output is interpreted.
    pub score_kind: ScoreKind,
    /// Longest context the backend accepts, when it declares one.
    pub context_limit: Option<u32>,
    /// Whether evaluate may be driven from several worker threads at
    /// once. Backends that serialize internally declare `false` and the
    /// profiler runs them sequentially.
    pub concurrent: bool,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("operation not supported by this backend: {0}")]
    UnsupportedOperation(String),
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    InvalidToken { id: TokenId, vocab_size: u32 },
    #[error("context of {len} tokens exceeds backend limit of {limit}")]
    ContextTooLong { len: usize, limit: u32 },
    #[error("empty context")]
    EmptyContext,
    #[error("n-gram order must be at least 1, got {order}")]
    InvalidOrder { order: usize },
    #[error("smoothing constant must be positive and finite, got {lambda}")]
    InvalidSmoothing { lambda: f64 },
    #[error("training needs at least {need} tokens, corpus has {have}")]
    InsufficientTraining { need: usize, have: usize },
    #[error("replay file corrupt: {0}")]
    ReplayCorrupt(String),
    #[error("window not present in replay session")]
    WindowNotRecorded,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("remote server reported: {0}")]
    Server(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed message: {0}")]
    Serialization(#[from] serde_json::Error),
}

/// Anything that can score the next token given a context.
///
/// `evaluate` must behave as a pure function of the supplied context:
/// deterministic, independent of call order, and unaffected by any
/// internal caching. That contract is what lets the profiler shard
/// windows across threads and lets record/replay reproduce a run
/// bit-exactly.
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Maps text to token ids. Deterministic for a fixed backend. Replay
    /// backends reject this: they carry a recorded token stream instead.
    fn tokenize(&self, text: &str) -> Result<TokenSequence, BackendError>;

    /// Full next-token score vector for a non-empty context. Exactly
    /// `vocab_size` finite entries.
    fn evaluate(&self, context: &[TokenId]) -> Result<LogitsVector, BackendError>;
}

/// Validates a context against a descriptor before evaluation.
pub(crate) fn check_context(
    descriptor: &BackendDescriptor,
    context: &[TokenId],
) -> Result<(), BackendError> {
    if context.is_empty() {
        return Err(BackendError::EmptyContext);
    }
    if let Some(limit) = descriptor.context_limit {
        if context.len() > limit as usize {
            return Err(BackendError::ContextTooLong {
                len: context.len(),
                limit,
            });
        }
    }
    for &id in context {
        if id >= descriptor.vocab_size {
            return Err(BackendError::InvalidToken {
                id,
                vocab_size: descriptor.vocab_size,
            });
        }
    }
    Ok(())
}

/// Evaluates one context and normalizes the result into a distribution,
/// honoring the backend's declared score kind.
pub fn next_token_distribution(
    backend: &dyn Backend,
    context: &[TokenId],
) -> Result<crate::Distribution, DistributionError> {
    let scores = backend.evaluate(context)?;
    let vocab = backend.descriptor().vocab_size as usize;
    if scores.len() != vocab {
        return Err(DistributionError::Entropy(EntropyError::LengthMismatch {
            left: vocab,
            right: scores.len(),
        }));
    }
    let dist = match backend.descriptor().score_kind {
        ScoreKind::Logits => crate::entropy::softmax_stable(scores.values)?,
        ScoreKind::Probs => crate::Distribution::renormalized(scores.values)?,
    };
    Ok(dist)
}

#[derive(Debug, Error)]
pub enum DistributionError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
}
