//! Newline-delimited JSON wire protocol for remote next-token scoring.
//!
//! One JSON object per line over a byte stream (TCP or a subprocess's
//! stdin/stdout). The server opens with a single `hello`; afterwards the
//! client sends `tokenize` / `evaluate` requests carrying ids of its
//! choosing and the server echoes each id back on the matching response.
//! Responses may arrive out of order.
//!
//! ```text
//! server: {"type":"hello","vocab_size":256,"context_limit":4096,
//!          "returns":"probs","tokenizer_id":"byte"}
//! client: {"type":"tokenize","id":1,"text":"ab"}
//! server: {"type":"tokens","id":1,"tokens":[97,98]}
//! client: {"type":"evaluate","id":2,"tokens":[97,98]}
//! server: {"type":"logits","id":2,"values":[...]}
//! server: {"type":"error","id":3,"message":"..."}
//! ```

use serde::{Deserialize, Serialize};

use crate::backend::TokenId;

/// Announced once by the server immediately after the connection opens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub vocab_size: u32,
    pub context_limit: u32,
    pub returns: Returns,
    pub tokenizer_id: String,
}

/// What the values of an `evaluate` response mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Returns {
    Logits,
    Probs,
}

/// Client-to-server messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Request {
    Tokenize { id: u64, text: String },
    Evaluate { id: u64, tokens: Vec<TokenId> },
}

/// Server-to-client messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Response {
    Hello(Hello),
    Tokens { id: u64, tokens: Vec<TokenId> },
    Logits { id: u64, values: Vec<f64> },
    Error { id: u64, message: String },
}

impl Response {
    /// The echoed request id, when the message carries one.
    pub fn id(&self) -> Option<u64> {
        match self {
            Response::Hello(_) => None,
            Response::Tokens { id, .. } | Response::Logits { id, .. } | Response::Error { id, .. } => {
                Some(*id)
            }
        }
    }
}
