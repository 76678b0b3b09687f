//! A tiny scripted HTTP/1.1 server for exercising the HTTP clients.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

#[derive(Debug, Clone)]
pub struct RecordedRequest {
    /// Request line and headers.
    pub head: String,
    pub body: String,
}

/// Serves the scripted `(status, body)` responses in order, one per request;
/// once the script runs out the last response repeats.
pub struct MockServer {
    addr: std::net::SocketAddr,
    requests: Arc<Mutex<Vec<RecordedRequest>>>,
}

impl MockServer {
    pub fn start(script: Vec<(u16, String)>) -> Self {
        assert!(!script.is_empty());
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let addr = listener.local_addr().unwrap();
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let n = log.lock().unwrap().len();
                let (status, body) = script[n.min(script.len() - 1)].clone();
                serve_one(stream, status, &body, &log);
            }
        });
        MockServer { addr, requests }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().unwrap().clone()
    }
}

fn serve_one(mut stream: TcpStream, status: u16, body: &str, log: &Mutex<Vec<RecordedRequest>>) -> Option<()> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut head = String::new();
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        if line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
        head.push_str(&line);
    }
    let mut buf = vec![0; content_length];
    reader.read_exact(&mut buf).ok()?;
    // logged before replying so a client that saw the reply sees the entry
    log.lock().unwrap().push(RecordedRequest {
        head,
        body: String::from_utf8_lossy(&buf).into_owned(),
    });
    let response = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(response.as_bytes()).ok()
}

/// Seeded Gaussian clusters around the first `n_classes` standard basis
/// vectors of `dim` dimensions, `per_class` points each, labelled
/// `class0`, `class1`, ... in class order.
pub fn anchor_clusters(
    seed: u64,
    dim: usize,
    n_classes: usize,
    per_class: usize,
    sigma: f32,
) -> Vec<(crate::dense::EmbeddingVector, String)> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    assert!(n_classes <= dim);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, sigma).expect("finite sigma");
    let mut out = Vec::with_capacity(n_classes * per_class);
    for c in 0..n_classes {
        for _ in 0..per_class {
            let v: Vec<f32> = (0..dim)
                .map(|i| noise.sample(&mut rng) + if i == c { 1.0 } else { 0.0 })
                .collect();
            out.push((crate::dense::EmbeddingVector(v), format!("class{c}")));
        }
    }
    out
}

/// Two classes with disjoint vocabularies, two documents each.
pub fn separable_toy() -> Vec<(String, String)> {
    [
        ("missile radar launch", "defense"),
        ("radar fleet missile", "defense"),
        ("harvest wheat rain", "farming"),
        ("rain soil harvest", "farming"),
    ]
    .iter()
    .map(|(t, l)| (t.to_string(), l.to_string()))
    .collect()
}

/// Backend whose reply is a function of the prompt; counts its calls.
pub struct FnBackend<F> {
    reply: F,
    prompts: Mutex<Vec<String>>,
}

impl<F: Fn(&str) -> String + Send + Sync> FnBackend<F> {
    pub fn new(reply: F) -> Self {
        FnBackend {
            reply,
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.prompts.lock().unwrap().len()
    }
}

impl<F: Fn(&str) -> String + Send + Sync> crate::llm::LlmBackend for FnBackend<F> {
    fn kind(&self) -> crate::llm::BackendKind {
        crate::llm::BackendKind::Stub
    }

    fn id(&self) -> String {
        "stub:fn".into()
    }

    fn complete(&self, req: &crate::llm::CompletionRequest) -> Result<crate::llm::Completion, crate::llm::LlmError> {
        self.prompts.lock().unwrap().push(req.prompt.clone());
        Ok(crate::llm::Completion {
            text: (self.reply)(&req.prompt),
            finish_reason: crate::llm::FinishReason::Stop,
            usage: crate::llm::Usage::default(),
            backend_id: self.id(),
            error_detail: None,
        })
    }
}
