//! Additively smoothed n-gram models: the desk-scale oracle backend.
//!
//! An order-`m` model counts every length-`m` window of the training
//! stream and predicts from the last `m-1` context tokens:
//!
//! ```text
//! p(y | c) = (count(c, y) + λ) / (count(c, ·) + λ·V)
//! ```
//!
//! λ > 0 gives every distribution full support, so the model emits
//! probabilities directly ([`ScoreKind::Probs`]) and the profiler skips
//! the softmax. Counts live in ordered maps so a retrained model
//! serializes byte-identically.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::backend::{
    check_context, Backend, BackendDescriptor, BackendError, BackendKind, LogitsVector, ScoreKind,
    TokenId, TokenSequence,
};

/// Model file schema version.
const FORMAT_VERSION: u32 = 1;

/// Tokenizer owned by an n-gram model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NGramTokenizer {
    /// One token per byte; vocabulary is fixed at 256. The default:
    /// universal and free of vocabulary-construction choices.
    Byte,
    /// Whitespace-separated words mapped through a corpus-built
    /// vocabulary, with id 0 reserved for out-of-vocabulary words.
    Word(WordVocab),
    /// Whitespace-separated integer token ids; for synthetic corpora.
    Ids { vocab_size: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordVocab {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl WordVocab {
    /// Rebuilds the lookup index from an ordered word list. Word `i`
    /// gets id `i + 1`; id 0 is the out-of-vocabulary token.
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), (i + 1) as TokenId))
            .collect();
        Self { words, index }
    }

    /// Builds a vocabulary from a corpus: words ranked by descending
    /// frequency (ties broken alphabetically), truncated to `cap - 1`
    /// entries so the OOV id fits inside `cap`.
    pub fn from_corpus(text: &str, cap: usize) -> Self {
        let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
        for word in text.split_whitespace() {
            *freq.entry(word).or_insert(0) += 1;
        }
        let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(cap.saturating_sub(1));
        Self::from_words(ranked.into_iter().map(|(w, _)| w.to_string()).collect())
    }

    pub fn vocab_size(&self) -> u32 {
        self.words.len() as u32 + 1
    }
}

impl NGramTokenizer {
    pub fn vocab_size(&self) -> u32 {
        match self {
            NGramTokenizer::Byte => 256,
            NGramTokenizer::Word(v) => v.vocab_size(),
            NGramTokenizer::Ids { vocab_size } => *vocab_size,
        }
    }

    pub fn id(&self) -> String {
        match self {
            NGramTokenizer::Byte => "byte".to_string(),
            NGramTokenizer::Word(v) => format!("word-{}", v.vocab_size()),
            NGramTokenizer::Ids { vocab_size } => format!("ids-{vocab_size}"),
        }
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSequence, BackendError> {
        let tokens = match self {
            NGramTokenizer::Byte => text.bytes().map(TokenId::from).collect(),
            NGramTokenizer::Word(v) => text
                .split_whitespace()
                .map(|w| v.index.get(w).copied().unwrap_or(0))
                .collect(),
            NGramTokenizer::Ids { vocab_size } => {
                let mut tokens = Vec::new();
                for field in text.split_whitespace() {
                    let id: TokenId = field.parse().map_err(|_| {
                        BackendError::Protocol(format!("not a token id: {field:?}"))
                    })?;
                    if id >= *vocab_size {
                        return Err(BackendError::InvalidToken {
                            id,
                            vocab_size: *vocab_size,
                        });
                    }
                    tokens.push(id);
                }
                tokens
            }
        };
        Ok(TokenSequence(tokens))
    }

    /// Inverse mapping where one exists. Byte streams that do not form
    /// valid UTF-8 (e.g. a window cut inside a multibyte character) and
    /// word streams reconstruct only up to tokenizer normalization.
    pub fn detokenize(&self, tokens: &[TokenId]) -> Option<String> {
        match self {
            NGramTokenizer::Byte => {
                let bytes: Vec<u8> = tokens.iter().map(|&t| t as u8).collect();
                String::from_utf8(bytes).ok()
            }
            NGramTokenizer::Word(v) => {
                let words: Option<Vec<&str>> = tokens
                    .iter()
                    .map(|&t| {
                        if t == 0 {
                            None
                        } else {
                            v.words.get(t as usize - 1).map(String::as_str)
                        }
                    })
                    .collect();
                words.map(|w| w.join(" "))
            }
            NGramTokenizer::Ids { .. } => Some(
                tokens
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(" "),
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ContextCounts {
    next: BTreeMap<TokenId, u64>,
    total: u64,
}

/// A trained additively smoothed n-gram model.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    lambda: f64,
    tokenizer: NGramTokenizer,
    counts: BTreeMap<Vec<TokenId>, ContextCounts>,
}

impl NGramModel {
    /// Counts every length-`order` window of `tokens`.
    pub fn train(
        tokens: &[TokenId],
        order: usize,
        lambda: f64,
        tokenizer: NGramTokenizer,
    ) -> Result<Self, BackendError> {
        if order < 1 {
            return Err(BackendError::InvalidOrder { order });
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(BackendError::InvalidSmoothing { lambda });
        }
        if tokens.len() < order {
            return Err(BackendError::InsufficientTraining {
                need: order,
                have: tokens.len(),
            });
        }
        let vocab_size = tokenizer.vocab_size();
        for &id in tokens {
            if id >= vocab_size {
                return Err(BackendError::InvalidToken { id, vocab_size });
            }
        }
        let mut counts: BTreeMap<Vec<TokenId>, ContextCounts> = BTreeMap::new();
        for window in tokens.windows(order) {
            let (context, next) = window.split_at(order - 1);
            let entry = counts.entry(context.to_vec()).or_default();
            *entry.next.entry(next[0]).or_insert(0) += 1;
            entry.total += 1;
        }
        Ok(Self {
            order,
            lambda,
            tokenizer,
            counts,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn vocab_size(&self) -> u32 {
        self.tokenizer.vocab_size()
    }

    pub fn tokenizer(&self) -> &NGramTokenizer {
        &self.tokenizer
    }

    /// Smoothed next-token probabilities given the last `order - 1`
    /// context tokens. Contexts shorter than `order - 1` never match a
    /// stored count and fall back to the uniform distribution, exactly
    /// as any other unseen context does.
    pub fn distribution(&self, context: &[TokenId]) -> Vec<f64> {
        let vocab = self.vocab_size() as usize;
        let ctx_len = self.order - 1;
        let hit = if context.len() >= ctx_len {
            self.counts.get(&context[context.len() - ctx_len..])
        } else {
            None
        };
        match hit {
            Some(cc) => {
                let denom = cc.total as f64 + self.lambda * vocab as f64;
                let mut probs = vec![self.lambda / denom; vocab];
                for (&token, &count) in &cc.next {
                    probs[token as usize] = (count as f64 + self.lambda) / denom;
                }
                probs
            }
            None => vec![1.0 / vocab as f64; vocab],
        }
    }

    pub fn save<W: Write>(&self, mut writer: W) -> Result<(), BackendError> {
        let file = NGramModelFile::from(self);
        let json = serde_json::to_string(&file)?;
        writer.write_all(json.as_bytes())?;
        writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn load<R: Read>(mut reader: R) -> Result<Self, BackendError> {
        let mut buf = String::new();
        reader.read_to_string(&mut buf)?;
        let file: NGramModelFile = serde_json::from_str(&buf)?;
        file.try_into()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum TokenizerSpec {
    Byte,
    Word { words: Vec<String> },
    Ids { vocab_size: u32 },
}

#[derive(Serialize, Deserialize)]
struct NGramModelFile {
    format_version: u32,
    order: usize,
    lambda: f64,
    tokenizer: TokenizerSpec,
    counts: Vec<(Vec<TokenId>, Vec<(TokenId, u64)>)>,
}

impl From<&NGramModel> for NGramModelFile {
    fn from(model: &NGramModel) -> Self {
        let tokenizer = match &model.tokenizer {
            NGramTokenizer::Byte => TokenizerSpec::Byte,
            NGramTokenizer::Word(v) => TokenizerSpec::Word {
                words: v.words.clone(),
            },
            NGramTokenizer::Ids { vocab_size } => TokenizerSpec::Ids {
                vocab_size: *vocab_size,
            },
        };
        let counts = model
            .counts
            .iter()
            .map(|(ctx, cc)| {
                (
                    ctx.clone(),
                    cc.next.iter().map(|(&t, &c)| (t, c)).collect(),
                )
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            order: model.order,
            lambda: model.lambda,
            tokenizer,
            counts,
        }
    }
}

impl TryFrom<NGramModelFile> for NGramModel {
    type Error = BackendError;

    fn try_from(file: NGramModelFile) -> Result<Self, BackendError> {
        if file.format_version != FORMAT_VERSION {
            return Err(BackendError::Protocol(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        if file.order < 1 {
            return Err(BackendError::InvalidOrder { order: file.order });
        }
        if !(file.lambda > 0.0 && file.lambda.is_finite()) {
            return Err(BackendError::InvalidSmoothing {
                lambda: file.lambda,
            });
        }
        let tokenizer = match file.tokenizer {
            TokenizerSpec::Byte => NGramTokenizer::Byte,
            TokenizerSpec::Word { words } => NGramTokenizer::Word(WordVocab::from_words(words)),
            TokenizerSpec::Ids { vocab_size } => NGramTokenizer::Ids { vocab_size },
        };
        let mut counts = BTreeMap::new();
        for (ctx, next) in file.counts {
            if ctx.len() != file.order - 1 {
                return Err(BackendError::Protocol(format!(
                    "context of length {} in an order-{} model",
                    ctx.len(),
                    file.order
                )));
            }
            let mut cc = ContextCounts::default();
            for (token, count) in next {
                if count == 0 {
                    return Err(BackendError::Protocol("zero count stored".into()));
                }
                cc.next.insert(token, count);
                cc.total += count;
            }
            counts.insert(ctx, cc);
        }
        Ok(Self {
            order: file.order,
            lambda: file.lambda,
            tokenizer,
            counts,
        })
    }
}

/// [`Backend`] wrapper around a trained [`NGramModel`].
pub struct NGramBackend {
    model: NGramModel,
    descriptor: BackendDescriptor,
}

impl NGramBackend {
    pub fn new(model: NGramModel) -> Self {
        let descriptor = BackendDescriptor {
            name: format!("ngram-m{}-{}", model.order(), model.tokenizer().id()),
            vocab_size: model.vocab_size(),
            kind: BackendKind::Ngram,
            tokenizer_id: model.tokenizer().id(),
            score_kind: ScoreKind::Probs,
            context_limit: None,
            concurrent: true,
        };
        Self { model, descriptor }
    }

    pub fn model(&self) -> &NGramModel {
        &self.model
    }
}

impl Backend for NGramBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, BackendError> {
        self.model.tokenizer().tokenize(text)
    }

    fn evaluate(&self, context: &[TokenId]) -> Result<LogitsVector, BackendError> {
        check_context(&self.descriptor, context)?;
        Ok(LogitsVector::new(self.model.distribution(context)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_tokenizer_is_identity_on_ascii() {
        let t = NGramTokenizer::Byte;
        assert_eq!(t.tokenize("ab").unwrap().as_slice(), &[97, 98]);
        assert_eq!(t.tokenize("").unwrap().as_slice(), &[] as &[TokenId]);
    }

    #[test]
    fn bigram_counts_match_hand_computation() {
        // tokens [0,1,0,1,0]: count(0->1) = 2, count(0->0) = 0.
        let model = NGramModel::train(
            &[0, 1, 0, 1, 0],
            2,
            1.0,
            NGramTokenizer::Ids { vocab_size: 2 },
        )
        .unwrap();
        let p = model.distribution(&[0]);
        assert_eq!(p, vec![0.25, 0.75]);
    }

    #[test]
    fn smoothing_formula_on_single_context() {
        // counts{[0] -> {1: 3}}, lambda = 1, vocab 2:
        // p = [(0+1)/(3+2), (3+1)/(3+2)]
        let model = NGramModel::train(
            &[0, 1, 0, 1, 0, 1],
            2,
            1.0,
            NGramTokenizer::Ids { vocab_size: 2 },
        )
        .unwrap();
        // that training gives count(0->1)=3, count(1->0)=2; only the
        // final context token matters for an order-2 model
        let p = model.distribution(&[1, 1, 0]);
        assert_eq!(p, vec![0.2, 0.8]);
        assert_eq!(model.distribution(&[0]), p);
    }

    #[test]
    fn unseen_context_is_uniform() {
        let model = NGramModel::train(
            &[0, 0, 0, 0],
            3,
            0.5,
            NGramTokenizer::Ids { vocab_size: 4 },
        )
        .unwrap();
        assert_eq!(model.distribution(&[3, 3]), vec![0.25; 4]);
    }

    #[test]
    fn unigram_ignores_context() {
        let model =
            NGramModel::train(&[0, 1, 1], 1, 1.0, NGramTokenizer::Ids { vocab_size: 2 }).unwrap();
        let a = model.distribution(&[0]);
        let b = model.distribution(&[1, 0, 1]);
        assert_eq!(a, b);
        // counts: 0 once, 1 twice; p = [(1+1)/5, (2+1)/5]
        assert_eq!(a, vec![0.4, 0.6]);
    }

    #[test]
    fn distributions_sum_to_one_with_full_support() {
        let text = "the quick brown fox jumps over the lazy dog";
        let tokenizer = NGramTokenizer::Byte;
        let tokens = tokenizer.tokenize(text).unwrap();
        let model = NGramModel::train(&tokens, 3, 0.01, tokenizer).unwrap();
        for ctx in tokens.windows(2).take(10) {
            let p = model.distribution(ctx);
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            let floor = 0.01 / (p.len() as f64 * 0.01 + model.counts[ctx].total as f64);
            assert!(p.iter().all(|&x| x >= floor));
        }
    }

    #[test]
    fn training_rejects_bad_parameters() {
        let ids = NGramTokenizer::Ids { vocab_size: 4 };
        assert!(matches!(
            NGramModel::train(&[0, 1], 0, 1.0, ids.clone()),
            Err(BackendError::InvalidOrder { order: 0 })
        ));
        assert!(matches!(
            NGramModel::train(&[0, 1], 2, 0.0, ids.clone()),
            Err(BackendError::InvalidSmoothing { .. })
        ));
        assert!(matches!(
            NGramModel::train(&[0, 1], 3, 1.0, ids),
            Err(BackendError::InsufficientTraining { need: 3, have: 2 })
        ));
    }

    #[test]
    fn model_file_round_trips_and_is_deterministic() {
        let tokens = NGramTokenizer::Byte.tokenize("abracadabra").unwrap();
        let model = NGramModel::train(&tokens, 2, 0.25, NGramTokenizer::Byte).unwrap();
        let mut first = Vec::new();
        model.save(&mut first).unwrap();
        let mut second = Vec::new();
        model.save(&mut second).unwrap();
        assert_eq!(first, second, "serialization must be deterministic");
        let restored = NGramModel::load(first.as_slice()).unwrap();
        assert_eq!(restored, model);
    }

    #[test]
    fn word_vocab_ranks_by_frequency_then_alphabet() {
        let vocab = WordVocab::from_corpus("b a a c c", 4);
        assert_eq!(vocab.words, vec!["a", "c", "b"]);
        let t = NGramTokenizer::Word(vocab);
        assert_eq!(t.tokenize("a c b zzz").unwrap().as_slice(), &[1, 2, 3, 0]);
    }

    #[test]
    fn backend_evaluate_validates_context() {
        let model =
            NGramModel::train(&[0, 1, 0], 2, 1.0, NGramTokenizer::Ids { vocab_size: 2 }).unwrap();
        let backend = NGramBackend::new(model);
        assert!(matches!(
            backend.evaluate(&[]),
            Err(BackendError::EmptyContext)
        ));
        assert!(matches!(
            backend.evaluate(&[7]),
            Err(BackendError::InvalidToken { id: 7, .. })
        ));
    }
}
