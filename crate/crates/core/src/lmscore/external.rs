use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Candidates, LmError, MaskedQuery, MaskedScorer, ScoreDistribution};
use crate::http::{EndpointConfig, JsonEndpoint};

/// Wire request. `id` is only sent on the line transport, where it correlates
/// concurrent in-flight requests with their answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub context: Vec<String>,
    pub mask_index: usize,
    pub candidates: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(default)]
    pub probs: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

type Pending = Arc<Mutex<HashMap<u64, mpsc::Sender<Result<ScoreResponse, String>>>>>;

struct LineChannel {
    writer: Mutex<Box<dyn Write + Send>>,
    pending: Pending,
    next_id: AtomicU64,
    timeout: Duration,
    retries: u32,
    child: Option<Mutex<Child>>,
}

impl LineChannel {
    fn new<R: Read + Send + 'static>(
        reader: R,
        writer: Box<dyn Write + Send>,
        timeout: Duration,
        retries: u32,
    ) -> Self {
        let pending: Pending = Arc::default();
        let dispatch = Arc::clone(&pending);
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let Ok(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<ScoreResponse>(&line) {
                    Ok(resp) => {
                        let Some(id) = resp.id else {
                            log::warn!("external scorer answer without id ignored");
                            continue;
                        };
                        if let Some(tx) = dispatch.lock().unwrap().remove(&id) {
                            let _ = tx.send(Ok(resp));
                        }
                    }
                    Err(e) => log::warn!("undecodable external scorer line: {e}"),
                }
            }
            for (_, tx) in dispatch.lock().unwrap().drain() {
                let _ = tx.send(Err("scorer closed its output stream".into()));
            }
        });
        LineChannel {
            writer: Mutex::new(writer),
            pending,
            next_id: AtomicU64::new(0),
            timeout,
            retries,
            child: None,
        }
    }

    fn call_once(&self, mut req: ScoreRequest) -> Result<ScoreResponse, String> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        req.id = Some(id);
        let (tx, rx) = mpsc::channel();
        self.pending.lock().unwrap().insert(id, tx);
        let line = serde_json::to_string(&req).map_err(|e| e.to_string())?;
        {
            let mut w = self.writer.lock().unwrap();
            let sent = writeln!(w, "{line}").and_then(|_| w.flush());
            if let Err(e) = sent {
                self.pending.lock().unwrap().remove(&id);
                return Err(e.to_string());
            }
        }
        match rx.recv_timeout(self.timeout) {
            Ok(r) => r,
            Err(_) => {
                self.pending.lock().unwrap().remove(&id);
                Err(format!("request {id} timed out"))
            }
        }
    }

    fn call(&self, req: &ScoreRequest) -> Result<ScoreResponse, LmError> {
        let mut last = String::new();
        for _ in 0..=self.retries {
            match self.call_once(req.clone()) {
                Ok(r) => return Ok(r),
                Err(e) => last = e,
            }
        }
        Err(LmError::External(last))
    }
}

impl Drop for LineChannel {
    fn drop(&mut self) {
        if let Some(child) = &self.child {
            let _ = child.lock().unwrap().kill();
        }
    }
}

enum Transport {
    Http(JsonEndpoint),
    Lines(LineChannel),
}

/// Masked scorer backed by an out-of-process model.
///
/// Requests are `{"context": [tokens], "mask_index": i, "candidates": [words] | null}`
/// and answers are `{"probs": {word: p}}`, sent either as HTTP POST bodies or as
/// newline-delimited JSON over a pipe.
pub struct ExternalScorer {
    transport: Transport,
    id: String,
}

impl ExternalScorer {
    pub fn http(config: EndpointConfig) -> Self {
        let id = format!("external-http({})", config.url);
        ExternalScorer {
            transport: Transport::Http(JsonEndpoint::new(config)),
            id,
        }
    }

    /// Talks to an arbitrary pair of streams.
    pub fn from_streams<R: Read + Send + 'static>(
        reader: R,
        writer: Box<dyn Write + Send>,
        timeout: Duration,
        retries: u32,
    ) -> Self {
        ExternalScorer {
            transport: Transport::Lines(LineChannel::new(reader, writer, timeout, retries)),
            id: "external-lines".into(),
        }
    }

    /// Spawns `program` and exchanges lines over its stdin/stdout.
    pub fn spawn(
        program: &str,
        args: &[String],
        timeout: Duration,
        retries: u32,
    ) -> Result<Self, LmError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut chan = LineChannel::new(stdout, Box::new(stdin), timeout, retries);
        chan.child = Some(Mutex::new(child));
        Ok(ExternalScorer {
            transport: Transport::Lines(chan),
            id: format!("external-process({program})"),
        })
    }

    fn request(&self, req: &ScoreRequest) -> Result<ScoreResponse, LmError> {
        let resp = match &self.transport {
            Transport::Http(ep) => ep.post::<_, ScoreResponse>(req, &[])?,
            Transport::Lines(chan) => chan.call(req)?,
        };
        if let Some(e) = resp.error {
            return Err(LmError::External(e));
        }
        Ok(resp)
    }
}

impl MaskedScorer for ExternalScorer {
    fn scorer_id(&self) -> String {
        self.id.clone()
    }

    fn predict(
        &self,
        query: &MaskedQuery,
        candidates: Candidates<'_>,
    ) -> Result<ScoreDistribution, LmError> {
        let candidates = match candidates {
            Candidates::FullVocab => None,
            Candidates::Words([]) => return Err(LmError::EmptyCandidates),
            Candidates::Words(w) => Some(w.to_vec()),
        };
        let req = ScoreRequest {
            id: None,
            context: query.context().iter().map(|t| t.surface().to_string()).collect(),
            mask_index: query.position(),
            candidates,
        };
        let resp = self.request(&req)?;
        // Model vocabularies are case-sensitive; fold onto normalized forms.
        let mut merged: BTreeMap<String, f64> = BTreeMap::new();
        for (w, p) in resp.probs {
            *merged.entry(w.trim().to_lowercase()).or_insert(0.0) += p;
        }
        ScoreDistribution::new(merged.into_iter().collect())
    }
}
