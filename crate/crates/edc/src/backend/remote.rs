//! Client side of the wire protocol: anything that serves the protocol
//! (the bundled stub, or a shim in front of a real inference stack)
//! becomes a [`Backend`].
//!
//! Incoming score vectors are quantized through `f32` on receipt. Replay
//! files store single-precision values, so this makes a live remote run
//! and a replay of its recording see bit-identical inputs.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::backend::wire::{Hello, Request, Response, Returns};
use crate::backend::{
    check_context, Backend, BackendDescriptor, BackendError, BackendKind, LogitsVector, ScoreKind,
    TokenId, TokenSequence,
};

/// Prefix selecting subprocess transport in `--address` strings.
const STDIO_PREFIX: &str = "stdio:";

struct Transport {
    reader: BufReader<Box<dyn Read + Send>>,
    writer: Box<dyn Write + Send>,
    /// Responses that arrived ahead of the request we were waiting on.
    pending: HashMap<u64, Response>,
    child: Option<Child>,
}

impl Transport {
    fn read_message(&mut self) -> Result<Response, BackendError> {
        let mut line = String::new();
        loop {
            line.clear();
            let n = self.reader.read_line(&mut line)?;
            if n == 0 {
                return Err(BackendError::Protocol("server closed the stream".into()));
            }
            if line.trim().is_empty() {
                continue;
            }
            return Ok(serde_json::from_str(&line)?);
        }
    }

    /// Sends one request and blocks until the response carrying its id
    /// arrives, stashing any other response encountered on the way.
    fn round_trip(&mut self, request: &Request) -> Result<Response, BackendError> {
        let id = match request {
            Request::Tokenize { id, .. } | Request::Evaluate { id, .. } => *id,
        };
        let mut line = serde_json::to_string(request)?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        loop {
            if let Some(response) = self.pending.remove(&id) {
                return Ok(response);
            }
            let response = self.read_message()?;
            match response.id() {
                Some(got) if got == id => return Ok(response),
                Some(got) => {
                    self.pending.insert(got, response);
                }
                None => {
                    return Err(BackendError::Protocol(
                        "unexpected hello after handshake".into(),
                    ))
                }
            }
        }
    }
}

impl Drop for Transport {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// [`Backend`] talking to a protocol server over TCP or a subprocess.
pub struct RemoteBackend {
    descriptor: BackendDescriptor,
    transport: Mutex<Transport>,
    next_id: AtomicU64,
}

impl RemoteBackend {
    /// Connects to `HOST:PORT`, or spawns `stdio:CMD ARG...` (split on
    /// whitespace, no shell quoting) and speaks over its stdin/stdout.
    pub fn connect(address: &str) -> Result<Self, BackendError> {
        if let Some(command_line) = address.strip_prefix(STDIO_PREFIX) {
            let mut parts = command_line.split_whitespace();
            let program = parts.next().ok_or_else(|| {
                BackendError::Protocol("empty command after stdio: prefix".into())
            })?;
            let mut child = Command::new(program)
                .args(parts)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            Self::handshake(address, Box::new(stdout), Box::new(stdin), Some(child))
        } else {
            let stream = TcpStream::connect(address)?;
            let reader = stream.try_clone()?;
            Self::handshake(address, Box::new(reader), Box::new(stream), None)
        }
    }

    /// Builds a backend over arbitrary byte streams; the server's hello
    /// must be the first readable line.
    pub fn from_streams(
        label: &str,
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
    ) -> Result<Self, BackendError> {
        Self::handshake(label, Box::new(reader), Box::new(writer), None)
    }

    fn handshake(
        label: &str,
        reader: Box<dyn Read + Send>,
        writer: Box<dyn Write + Send>,
        child: Option<Child>,
    ) -> Result<Self, BackendError> {
        let mut transport = Transport {
            reader: BufReader::new(reader),
            writer,
            pending: HashMap::new(),
            child,
        };
        let hello = match transport.read_message()? {
            Response::Hello(hello) => hello,
            other => {
                return Err(BackendError::Protocol(format!(
                    "expected hello, got {other:?}"
                )))
            }
        };
        if hello.vocab_size < 2 {
            return Err(BackendError::Protocol(format!(
                "server declares vocab_size {}",
                hello.vocab_size
            )));
        }
        log::info!(
            "connected to {label}: vocab {}, context limit {}, returns {:?}",
            hello.vocab_size,
            hello.context_limit,
            hello.returns
        );
        Ok(Self {
            descriptor: descriptor_from_hello(&hello),
            transport: Mutex::new(transport),
            next_id: AtomicU64::new(1),
        })
    }

    fn request(&self, request: Request) -> Result<Response, BackendError> {
        let mut transport = self.transport.lock().expect("transport poisoned");
        match transport.round_trip(&request)? {
            Response::Error { message, .. } => Err(BackendError::Server(message)),
            other => Ok(other),
        }
    }

    fn fresh_id(&self) -> u64 {
        self.next_id.fetch_add(1, Ordering::Relaxed)
    }
}

fn descriptor_from_hello(hello: &Hello) -> BackendDescriptor {
    BackendDescriptor {
        name: format!("remote:{}", hello.tokenizer_id),
        vocab_size: hello.vocab_size,
        kind: BackendKind::Remote,
        tokenizer_id: hello.tokenizer_id.clone(),
        score_kind: match hello.returns {
            Returns::Logits => ScoreKind::Logits,
            Returns::Probs => ScoreKind::Probs,
        },
        context_limit: Some(hello.context_limit),
        concurrent: false,
    }
}

impl Backend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, BackendError> {
        let id = self.fresh_id();
        match self.request(Request::Tokenize {
            id,
            text: text.to_string(),
        })? {
            Response::Tokens { tokens, .. } => {
                for &t in &tokens {
                    if t >= self.descriptor.vocab_size {
                        return Err(BackendError::InvalidToken {
                            id: t,
                            vocab_size: self.descriptor.vocab_size,
                        });
                    }
                }
                Ok(TokenSequence(tokens))
            }
            other => Err(BackendError::Protocol(format!(
                "expected tokens, got {other:?}"
            ))),
        }
    }

    fn evaluate(&self, context: &[TokenId]) -> Result<LogitsVector, BackendError> {
        check_context(&self.descriptor, context)?;
        let id = self.fresh_id();
        match self.request(Request::Evaluate {
            id,
            tokens: context.to_vec(),
        })? {
            Response::Logits { values, .. } => {
                if values.len() != self.descriptor.vocab_size as usize {
                    return Err(BackendError::Protocol(format!(
                        "server sent {} values for vocab of {}",
                        values.len(),
                        self.descriptor.vocab_size
                    )));
                }
                let mut quantized = values;
                for v in &mut quantized {
                    if !v.is_finite() {
                        return Err(BackendError::Protocol("non-finite score".into()));
                    }
                    *v = *v as f32 as f64;
                }
                Ok(LogitsVector::new(quantized))
            }
            other => Err(BackendError::Protocol(format!(
                "expected logits, got {other:?}"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    /// A canned byte-stream server: hello plus scripted responses.
    fn scripted(lines: &[&str]) -> Cursor<Vec<u8>> {
        let mut bytes = Vec::new();
        for line in lines {
            bytes.extend_from_slice(line.as_bytes());
            bytes.push(b'\n');
        }
        Cursor::new(bytes)
    }

    const HELLO: &str = r#"{"type":"hello","vocab_size":4,"context_limit":64,"returns":"logits","tokenizer_id":"byte"}"#;

    #[test]
    fn out_of_order_responses_are_matched_by_id() {
        // First request gets id 1, second id 2; the server answers 2 first.
        let reader = scripted(&[
            HELLO,
            r#"{"type":"logits","id":2,"values":[0.0,0.0,0.0,1.0]}"#,
            r#"{"type":"logits","id":1,"values":[1.0,0.0,0.0,0.0]}"#,
        ]);
        let backend = RemoteBackend::from_streams("test", reader, std::io::sink()).unwrap();
        let first = backend.evaluate(&[0]).unwrap();
        assert_eq!(first.values, vec![1.0, 0.0, 0.0, 0.0]);
        let second = backend.evaluate(&[1]).unwrap();
        assert_eq!(second.values, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn server_error_surfaces_with_message() {
        let reader = scripted(&[HELLO, r#"{"type":"error","id":1,"message":"boom"}"#]);
        let backend = RemoteBackend::from_streams("test", reader, std::io::sink()).unwrap();
        match backend.evaluate(&[0]) {
            Err(BackendError::Server(message)) => assert_eq!(message, "boom"),
            other => panic!("expected server error, got {other:?}"),
        }
    }

    #[test]
    fn scores_are_quantized_to_single_precision() {
        let value = 0.123456789012345_f64;
        let line = format!(r#"{{"type":"logits","id":1,"values":[{value},0.0,0.0,0.0]}}"#);
        let reader = scripted(&[HELLO, &line]);
        let backend = RemoteBackend::from_streams("test", reader, std::io::sink()).unwrap();
        let logits = backend.evaluate(&[0]).unwrap();
        assert_eq!(logits.values[0], value as f32 as f64);
        assert_ne!(logits.values[0], value);
    }

    #[test]
    fn context_limit_is_enforced_locally() {
        let reader = scripted(&[HELLO]);
        let backend = RemoteBackend::from_streams("test", reader, std::io::sink()).unwrap();
        let long_context = vec![0; 65];
        assert!(matches!(
            backend.evaluate(&long_context),
            Err(BackendError::ContextTooLong { len: 65, limit: 64 })
        ));
    }

    #[test]
    fn truncated_stream_is_a_protocol_error() {
        let reader = scripted(&[HELLO]);
        let backend = RemoteBackend::from_streams("test", reader, std::io::sink()).unwrap();
        assert!(matches!(
            backend.evaluate(&[0]),
            Err(BackendError::Protocol(_))
        ));
    }
}
