use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::UsageProfile;
use crate::distill::{build_prompt, DistillError, PromptTemplate, TermSet};
use crate::http::{EndpointConfig, HttpError, JsonEndpoint};
use crate::lmscore::NGramModel;
use crate::reconstruct::{reconstruct, ReconstructionConfig};
use crate::textcore::{count_lexicon_terms, detokenize, tokenize};

pub const REQUEST_ID_HEADER: &str = "X-Request-Id";

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("generation request {request_id}: {source}")]
    Http {
        request_id: String,
        #[source]
        source: HttpError,
    },
    #[error("generation request {request_id}: endpoint returned an empty answer")]
    EmptyAnswer { request_id: String },
    #[error(transparent)]
    Prompt(#[from] DistillError),
}

impl GenerationError {
    pub fn request_id(&self) -> Option<&str> {
        match self {
            GenerationError::Http { request_id, .. } | GenerationError::EmptyAnswer { request_id } => {
                Some(request_id)
            }
            GenerationError::Prompt(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    /// Requests sharing a session are sent one at a time.
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    #[serde(default)]
    pub input_tokens: u64,
    #[serde(default)]
    pub output_tokens: u64,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    temperature: f64,
}

pub trait Generator: Send + Sync {
    /// Sends one request, returning the request id used alongside the answer.
    fn generate(&self, req: &GenerationRequest) -> Result<(String, GenerationResponse), GenerationError>;
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// HTTP client for a completion endpoint taking `{"prompt", "temperature"}` and
/// answering `{"text", "input_tokens", "output_tokens"}`.
///
/// At most `max_concurrency` requests are in flight; requests of one session
/// never overlap. Each request carries an `X-Request-Id` header.
pub struct GenerationClient {
    endpoint: JsonEndpoint,
    slots: Semaphore,
    sessions: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    next_id: AtomicU64,
    id_prefix: String,
}

impl GenerationClient {
    pub fn new(config: EndpointConfig, max_concurrency: usize) -> Self {
        GenerationClient {
            endpoint: JsonEndpoint::new(config),
            slots: Semaphore {
                free: Mutex::new(max_concurrency.max(1)),
                cv: Condvar::new(),
            },
            sessions: Mutex::default(),
            next_id: AtomicU64::new(1),
            id_prefix: format!("trimkit-{}", std::process::id()),
        }
    }

    fn session_lock(&self, id: &str) -> Arc<Mutex<()>> {
        Arc::clone(self.sessions.lock().unwrap().entry(id.to_string()).or_default())
    }
}

impl Generator for GenerationClient {
    fn generate(&self, req: &GenerationRequest) -> Result<(String, GenerationResponse), GenerationError> {
        let request_id = format!("{}-{}", self.id_prefix, self.next_id.fetch_add(1, Ordering::Relaxed));
        let session = req.session_id.as_deref().map(|s| self.session_lock(s));
        let _serial = session.as_ref().map(|m| m.lock().unwrap());
        let _slot = self.slots.acquire();
        let body = WireRequest {
            prompt: &req.prompt,
            temperature: req.temperature,
        };
        let resp: GenerationResponse = self
            .endpoint
            .post(&body, &[(REQUEST_ID_HEADER, &request_id)])
            .map_err(|source| GenerationError::Http {
                request_id: request_id.clone(),
                source,
            })?;
        if resp.text.trim().is_empty() {
            return Err(GenerationError::EmptyAnswer { request_id });
        }
        Ok((request_id, resp))
    }
}

/// Token count of the distilled prompt minus that of the plain prompt for the same question.
pub fn extra_instruction_tokens(
    terms: &TermSet,
    question: &str,
    distilled: &PromptTemplate,
    plain: &PromptTemplate,
) -> Result<usize, DistillError> {
    let d = tokenize(&build_prompt(terms.lexicon(), question, distilled)?).len();
    let p = tokenize(&build_prompt(terms.lexicon(), question, plain)?).len();
    Ok(d.saturating_sub(p))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrimOutcome {
    pub request_id: String,
    pub prompt: String,
    pub distilled: String,
    /// Absent when reconstruction failed; `reconstruction_error` says why.
    pub reconstructed: Option<String>,
    pub reconstruction_error: Option<String>,
    pub inserted_positions: Vec<usize>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub distilled_tokens: usize,
    pub reconstructed_tokens: usize,
    pub distilled_term_count: usize,
    pub distilled_perplexity: f64,
    pub reconstructed_perplexity: Option<f64>,
}

impl TrimOutcome {
    /// Reconstruction reads the distilled answer and writes the full one; the
    /// gain is the number of words the generator did not have to produce.
    pub fn usage_profile(&self, extra_input: f64) -> UsageProfile {
        UsageProfile {
            extra_input,
            gained_output: self.reconstructed_tokens.saturating_sub(self.distilled_tokens) as f64,
            recon_input: self.distilled_tokens as f64,
            recon_output: self.reconstructed_tokens as f64,
        }
    }
}

/// Asks the generator for a distilled answer and reconstructs it locally.
#[allow(clippy::too_many_arguments)]
pub fn run_trim(
    question: &str,
    terms: &TermSet,
    template: &PromptTemplate,
    generator: &dyn Generator,
    temperature: f64,
    session_id: Option<&str>,
    model: &NGramModel,
    recon: &ReconstructionConfig,
) -> Result<TrimOutcome, GenerationError> {
    let prompt = build_prompt(terms.lexicon(), question, template)?;
    let (request_id, resp) = generator.generate(&GenerationRequest {
        prompt: prompt.clone(),
        temperature,
        session_id: session_id.map(str::to_string),
    })?;
    let distilled = tokenize(&resp.text);
    let distilled_perplexity = model.score_with_boundaries(&distilled).perplexity;
    let mut out = TrimOutcome {
        request_id,
        prompt,
        distilled: resp.text.trim().to_string(),
        reconstructed: None,
        reconstruction_error: None,
        inserted_positions: Vec::new(),
        input_tokens: resp.input_tokens,
        output_tokens: resp.output_tokens,
        distilled_tokens: distilled.len(),
        reconstructed_tokens: 0,
        distilled_term_count: count_lexicon_terms(&distilled, terms.lexicon()),
        distilled_perplexity,
        reconstructed_perplexity: None,
    };
    match reconstruct(&distilled, terms, model, recon) {
        Ok(r) => {
            out.reconstructed = Some(detokenize(&r.output));
            out.reconstructed_tokens = r.output.len();
            out.reconstructed_perplexity = Some(model.score_with_boundaries(&r.output).perplexity);
            out.inserted_positions = r.inserted_positions;
        }
        Err(e) => {
            log::warn!("request {}: reconstruction failed: {e}", out.request_id);
            out.reconstruction_error = Some(e.to_string());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::{break_even, CostParams};
    use crate::distill::TermSource;
    use crate::textcore::{Corpus, Lexicon};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    /// Serves `n` requests, replying with `reply(body, headers)`; returns the base URL.
    fn serve(n: usize, reply: impl Fn(&str, &str) -> (u16, String) + Send + 'static) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/generate", listener.local_addr().unwrap());
        thread::spawn(move || {
            for stream in listener.incoming().take(n) {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut headers = String::new();
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
                    headers.push_str(&line);
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let (status, text) = reply(&String::from_utf8(body).unwrap(), &headers);
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
            }
        });
        url
    }

    fn model() -> NGramModel {
        let corpus = Corpus::from_texts("m", vec!["i went to the marathon in the city center"; 20]);
        NGramModel::train(&corpus, 3, 0.01).unwrap()
    }

    fn terms() -> TermSet {
        TermSet::new(Lexicon::new("s", ["i", "to", "the", "in"]).unwrap(), TermSource::Manual).unwrap()
    }

    #[test]
    fn round_trip_against_mock_endpoint() {
        let url = serve(1, |body, headers| {
            let v: serde_json::Value = serde_json::from_str(body).unwrap();
            assert!(v["prompt"].as_str().unwrap().contains("such as: i, to, the, in."));
            assert_eq!(v["temperature"], 0.0);
            assert!(headers.to_ascii_lowercase().contains("x-request-id: trimkit-"));
            (200, r#"{"text":"went marathon city center","input_tokens":120,"output_tokens":4}"#.into())
        });
        let client = GenerationClient::new(EndpointConfig::new(url), 2);
        let template = PromptTemplate::builtin("distilled").unwrap();
        let cfg = ReconstructionConfig { beam_width: 16, ..Default::default() };
        let out = run_trim("Where did you go?", &terms(), &template, &client, 0.0, Some("s1"), &model(), &cfg).unwrap();
        assert_eq!(out.distilled, "went marathon city center");
        let rebuilt = out.reconstructed.clone().unwrap();
        assert_eq!(rebuilt, "I went to the marathon in the city center");
        let rebuilt_seq = tokenize(&rebuilt);
        for &p in &out.inserted_positions {
            assert!(terms().lexicon().contains(rebuilt_seq.tokens()[p].norm()));
        }
        assert_eq!((out.input_tokens, out.output_tokens), (120, 4));
        assert!(out.reconstructed_perplexity.unwrap() < out.distilled_perplexity);

        let profile = out.usage_profile(97.0);
        assert_eq!((profile.gained_output, profile.recon_input, profile.recon_output), (5.0, 4.0, 9.0));
        let prices = CostParams {
            gen_input_price: 2.5e-6,
            gen_output_price: 10e-6,
            recon_input_price: 0.0,
            recon_output_price: 0.0,
        };
        let verdict = break_even(&prices, &profile);
        assert_eq!(verdict.lhs, 10e-6 * 5.0);
        assert_eq!(verdict.rhs, 2.5e-6 * 97.0);
        assert!(!verdict.saves);
    }

    #[test]
    fn timeout_reports_request_id() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/generate", listener.local_addr().unwrap());
        let hold = thread::spawn(move || {
            let (s, _) = listener.accept().unwrap();
            thread::sleep(std::time::Duration::from_millis(800));
            drop(s);
        });
        let mut cfg = EndpointConfig::new(url);
        cfg.timeout_secs = 0.2;
        let client = GenerationClient::new(cfg, 1);
        let req = GenerationRequest { prompt: "p".into(), temperature: 0.0, session_id: None };
        let err = client.generate(&req).unwrap_err();
        let id = err.request_id().unwrap().to_string();
        assert!(id.starts_with("trimkit-"));
        assert!(err.to_string().contains(&id));
        hold.join().unwrap();
    }

    #[test]
    fn empty_answer_and_status_errors() {
        let url = serve(2, |_, _| (200, r#"{"text":"  "}"#.into()));
        let client = GenerationClient::new(EndpointConfig::new(url), 1);
        let req = GenerationRequest { prompt: "p".into(), temperature: 0.0, session_id: None };
        assert!(matches!(client.generate(&req), Err(GenerationError::EmptyAnswer { .. })));
        let url = serve(1, |_, _| (401, r#"{"error":"no"}"#.into()));
        let client = GenerationClient::new(EndpointConfig::new(url), 1);
        assert!(matches!(
            client.generate(&req),
            Err(GenerationError::Http { source: HttpError::Status { status: 401, .. }, .. })
        ));
    }

    #[test]
    fn instruction_overhead() {
        let t = TermSet::new(Lexicon::builtin("exploratory23").unwrap(), TermSource::Manual).unwrap();
        let d = PromptTemplate::builtin("distilled").unwrap();
        let p = PromptTemplate::builtin("plain").unwrap();
        let extra = extra_instruction_tokens(&t, "What is art?", &d, &p).unwrap();
        let d_len = tokenize(&build_prompt(t.lexicon(), "What is art?", &d).unwrap()).len();
        let p_len = tokenize(&build_prompt(t.lexicon(), "What is art?", &p).unwrap()).len();
        assert_eq!(extra, d_len - p_len);
        assert!(extra > 23);
    }
}
