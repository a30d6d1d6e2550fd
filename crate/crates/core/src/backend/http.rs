use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{validate_logits, BackendError, BackendErrorKind, LogitBackend, ScoreRequest};
use crate::aggregator::LogitVector;

/// Body of `POST /v1/score`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequestBody {
    pub example_id: String,
    pub prompted_text: String,
}

/// Response of `POST /v1/score`: dense logits over the whole vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponseBody {
    pub logits: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct HttpBackendOptions {
    pub timeout: Duration,
    /// Extra attempts after a transport failure or 5xx response.
    pub retries: usize,
}

impl Default for HttpBackendOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(60),
            retries: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    vocab_size: usize,
    retries: usize,
}

impl HttpBackend {
    pub fn new(
        base_url: &str,
        vocab_size: usize,
        options: HttpBackendOptions,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(options.timeout)
            .build()
            .map_err(|e| BackendError::new("", BackendErrorKind::Transport(e.to_string())))?;
        Ok(Self {
            client,
            endpoint: format!("{}/v1/score", base_url.trim_end_matches('/')),
            vocab_size,
            retries: options.retries,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn attempt(&self, body: &ScoreRequestBody) -> Result<Vec<f32>, (BackendErrorKind, bool)> {
        let response = self
            .client
            .post(&self.endpoint)
            .json(body)
            .send()
            .map_err(|e| (BackendErrorKind::Transport(e.to_string()), true))?;
        let status = response.status();
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err((
                BackendErrorKind::Status {
                    status: status.as_u16(),
                    body: text.chars().take(200).collect(),
                },
                status.is_server_error(),
            ));
        }
        let bytes = response
            .bytes()
            .map_err(|e| (BackendErrorKind::Transport(e.to_string()), true))?;
        let parsed: ScoreResponseBody = serde_json::from_slice(&bytes)
            .map_err(|e| (BackendErrorKind::InvalidResponse(e.to_string()), false))?;
        Ok(parsed.logits)
    }
}

impl LogitBackend for HttpBackend {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn score(&self, request: &ScoreRequest) -> Result<LogitVector, BackendError> {
        let body = ScoreRequestBody {
            example_id: request.example_id.clone(),
            prompted_text: request.prompted_text.clone(),
        };
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(values) => {
                    return validate_logits(&request.example_id, values, self.vocab_size)
                }
                Err((kind, retryable)) => {
                    if !retryable || attempt >= self.retries {
                        return Err(BackendError::new(request.example_id.as_str(), kind));
                    }
                    log::warn!(
                        "example {:?}: {kind}; retrying ({}/{})",
                        request.example_id,
                        attempt + 1,
                        self.retries
                    );
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use super::*;

    /// Serves `n` requests, answering each with `respond(body)`.
    fn serve<F>(n: usize, respond: F) -> (String, Arc<AtomicUsize>)
    where
        F: Fn(&str) -> (u16, String) + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming().take(n) {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                counter.fetch_add(1, Ordering::SeqCst);
                let (status, payload) = respond(std::str::from_utf8(&body).unwrap());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}"), hits)
    }

    fn request() -> ScoreRequest {
        ScoreRequest {
            example_id: "ex1".into(),
            prompted_text: "A [MASK] news".into(),
            mask_char_offset: 2,
        }
    }

    #[test]
    fn posts_body_and_parses_logits() {
        let (url, _) = serve(1, |body| {
            let req: ScoreRequestBody = serde_json::from_str(body).unwrap();
            assert_eq!(req.example_id, "ex1");
            assert_eq!(req.prompted_text, "A [MASK] news");
            (200, r#"{"logits":[0.5,1.5,-2.0]}"#.into())
        });
        let b = HttpBackend::new(&format!("{url}/"), 3, HttpBackendOptions::default()).unwrap();
        assert_eq!(b.endpoint(), format!("{url}/v1/score"));
        assert_eq!(b.score(&request()).unwrap().values(), &[0.5, 1.5, -2.0]);
    }

    #[test]
    fn short_vector_is_length_mismatch() {
        let (url, _) = serve(1, |_| (200, r#"{"logits":[0.5,1.5]}"#.into()));
        let b = HttpBackend::new(&url, 3, HttpBackendOptions::default()).unwrap();
        let err = b.score(&request()).unwrap_err();
        assert_eq!(err.example_id, "ex1");
        assert!(matches!(
            err.kind,
            BackendErrorKind::LengthMismatch {
                expected: 3,
                found: 2
            }
        ));
    }

    #[test]
    fn error_status_is_reported() {
        let (url, _) = serve(1, |_| (404, "nope".into()));
        let b = HttpBackend::new(&url, 3, HttpBackendOptions::default()).unwrap();
        assert!(matches!(
            b.score(&request()).unwrap_err().kind,
            BackendErrorKind::Status { status: 404, .. }
        ));
    }

    #[test]
    fn server_errors_are_retried() {
        let (url, hits) = serve(2, {
            let calls = AtomicUsize::new(0);
            move |_| {
                if calls.fetch_add(1, Ordering::SeqCst) == 0 {
                    (503, "busy".into())
                } else {
                    (200, r#"{"logits":[1,2,3]}"#.into())
                }
            }
        });
        let b = HttpBackend::new(
            &url,
            3,
            HttpBackendOptions {
                retries: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(b.score(&request()).unwrap().values(), &[1.0, 2.0, 3.0]);
        assert_eq!(hits.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn unreachable_service_is_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        drop(listener);
        let b = HttpBackend::new(&url, 3, HttpBackendOptions::default()).unwrap();
        assert!(matches!(
            b.score(&request()).unwrap_err().kind,
            BackendErrorKind::Transport(_)
        ));
    }
}
