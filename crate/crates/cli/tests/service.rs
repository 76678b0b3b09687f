use std::fs;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use docsift::dense::HashEmbedder;
use docsift::llm::{LlmBackend, StubBackend};
use docsift_cli::app::App;
use docsift_cli::config::Config;
use docsift_cli::service::BackgroundServer;
use reqwest::blocking::Client;
use serde_json::{json, Value};

const FILES: [(&str, &str); 5] = [
    ("budget.txt", "The defense budget grew four percent, mostly for shipbuilding and maintenance."),
    ("space.txt", "Launch cadence doubled after the new pad opened; orbital debris remains a concern."),
    ("cyber.txt", "Red team exercises found weak passwords on several logistics servers."),
    ("hypersonic.txt", "Hypersonic glide vehicle tests exposed gaps in current tracking radars."),
    ("training.txt", "Recruit training now includes simulator hours before live exercises."),
];

struct Fixture {
    _tmp: tempfile::TempDir,
    docs: std::path::PathBuf,
    app: Arc<App>,
    server: BackgroundServer,
    client: Client,
}

fn config_for(store: &Path, extra: &str) -> Config {
    let text = format!("store_dir = {}\n{extra}", serde_json::to_string(&store.to_string_lossy()).unwrap());
    Config::parse(&text).unwrap()
}

fn fixture_with(llm: Arc<dyn LlmBackend>, extra: &str) -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let docs = tmp.path().join("docs");
    fs::create_dir_all(&docs).unwrap();
    for (name, text) in FILES {
        fs::write(docs.join(name), text).unwrap();
    }
    let config = config_for(&tmp.path().join("store"), extra);
    let embedder = Arc::new(HashEmbedder::new(config.embedder.dim).unwrap());
    let app = Arc::new(App::with_backends(config, true, embedder, llm).unwrap());
    let server = BackgroundServer::start(app.clone(), SocketAddr::from(([127, 0, 0, 1], 0))).unwrap();
    let client = Client::builder().timeout(Duration::from_secs(30)).build().unwrap();
    Fixture {
        _tmp: tmp,
        docs,
        app,
        server,
        client,
    }
}

fn fixture() -> Fixture {
    fixture_with(Arc::new(StubBackend::echo()), "")
}

impl Fixture {
    fn get(&self, path: &str) -> (u16, Value) {
        let r = self.client.get(self.server.url(path)).send().unwrap();
        (r.status().as_u16(), r.json().unwrap())
    }

    fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let r = self.client.post(self.server.url(path)).json(&body).send().unwrap();
        (r.status().as_u16(), r.json().unwrap())
    }

    fn ingest(&self) -> Value {
        let (status, body) = self.post("/ingest", json!({"path": self.docs}));
        assert_eq!(status, 200, "{body}");
        body
    }

    fn doc(&self, name: &str) -> String {
        self.docs.join(name).canonicalize().unwrap().to_string_lossy().into_owned()
    }
}

fn assert_api_error(body: &Value, code: &str) {
    let obj = body.as_object().unwrap();
    assert_eq!(obj["code"], code, "{body}");
    assert!(obj["message"].is_string());
    assert!(obj.keys().all(|k| ["code", "message", "detail"].contains(&k.as_str())), "{body}");
}

#[test]
fn health_reports_ok() {
    let f = fixture();
    let (status, body) = f.get("/health");
    assert_eq!(status, 200);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(body["chunk_count"], 0);
    assert_eq!(body["llm_backend"], "stub:echo_prompt");
}

#[test]
fn ingest_then_ask_cites_the_key_file() {
    let f = fixture();
    let report = f.ingest();
    assert_eq!(report["files_ingested"], 5);
    let (status, answer) = f.post("/ask", json!({"question": "What did the hypersonic tests show?", "k": 3}));
    assert_eq!(status, 200, "{answer}");
    assert!(answer["answer_text"].as_str().unwrap().starts_with("STUB:"));
    let sources: Vec<&str> = answer["sources"].as_array().unwrap().iter().map(|s| s["source_path"].as_str().unwrap()).collect();
    assert!(sources.contains(&f.doc("hypersonic.txt").as_str()), "{sources:?}");
    assert_eq!(f.get("/health").1["chunk_count"], 5);
}

#[test]
fn search_pages_and_highlights() {
    let f = fixture();
    f.ingest();
    let (status, page) = f.get("/search?q=radars%20OR%20budget&page=1&page_size=1&mode=keyword");
    assert_eq!(status, 200, "{page}");
    assert_eq!(page["total_hits"], 2);
    assert_eq!(page["hits"].as_array().unwrap().len(), 1);
    let (_, second) = f.get("/search?q=radars%20OR%20budget&page=2&page_size=1");
    assert_ne!(page["hits"][0]["chunk_id"], second["hits"][0]["chunk_id"]);
    let (status, hybrid) = f.get("/search?q=orbital%20debris&mode=hybrid");
    assert_eq!(status, 200);
    assert_eq!(hybrid["hits"][0]["source_path"], f.doc("space.txt"));
}

#[test]
fn malformed_query_is_a_parse_error_with_position() {
    let f = fixture();
    let (status, body) = f.get("/search?q=radar%20(navy");
    assert_eq!(status, 400);
    assert_api_error(&body, "parse_error");
    assert_eq!(body["detail"]["position"], 6);
    let (status, body) = f.get("/search?mode=keyword");
    assert_eq!(status, 400);
    assert_api_error(&body, "invalid_request");
}

#[test]
fn framework_errors_are_api_errors() {
    let f = fixture();
    let (status, body) = f.get("/nowhere");
    assert_eq!(status, 404);
    assert_api_error(&body, "not_found");
    let (status, body) = f.get("/ask");
    assert_eq!(status, 405);
    assert_api_error(&body, "method_not_allowed");
    let r = f.client.post(f.server.url("/ask")).body("{not json").header("content-type", "application/json").send().unwrap();
    assert_eq!(r.status().as_u16(), 400);
    assert_api_error(&r.json().unwrap(), "invalid_request");
    let (status, body) = f.post("/ask", json!({"question": "   "}));
    assert_eq!(status, 400, "{body}");
}

#[test]
fn second_concurrent_ingest_gets_409() {
    let f = fixture();
    let (entered_tx, entered_rx) = mpsc::channel();
    let (release_tx, release_rx) = mpsc::channel::<()>();
    let app = f.app.clone();
    let docs = f.docs.clone();
    let writer = std::thread::spawn(move || {
        let mut first = true;
        app.ingest(&docs, &mut |_| {
            if first {
                first = false;
                entered_tx.send(()).unwrap();
                release_rx.recv().unwrap();
            }
            Ok(())
        })
    });
    entered_rx.recv().unwrap();
    assert!(f.app.ingest_running());
    let (status, body) = f.post("/ingest", json!({"path": f.docs}));
    assert_eq!(status, 409);
    assert_api_error(&body, "ingest_busy");
    // readers still see the last published snapshot
    assert_eq!(f.get("/health").1["chunk_count"], 0);
    release_tx.send(()).unwrap();
    let report = writer.join().unwrap().unwrap();
    assert_eq!(report.files_ingested, 5);
    assert_eq!(f.get("/health").1["chunk_count"], 5);
    let again = f.ingest();
    assert_eq!(again["files_skipped_unchanged"], 5);
}

#[test]
fn config_is_redacted() {
    let secret = "sk-live-7f3a9c2e-very-secret";
    std::env::set_var("DOCSIFT_SERVICE_TEST_KEY", secret);
    let f = fixture_with(
        Arc::new(StubBackend::echo()),
        "[llm]\nbackend = http\nendpoint = http://127.0.0.1:9/v1/chat/completions\napi_key_env = DOCSIFT_SERVICE_TEST_KEY\n",
    );
    let r = f.client.get(f.server.url("/config")).send().unwrap();
    assert_eq!(r.status().as_u16(), 200);
    let text = r.text().unwrap();
    assert!(!text.contains(secret));
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["llm"]["api_key_present"], true);
    assert_eq!(v["llm"]["api_key_env"], "DOCSIFT_SERVICE_TEST_KEY");
    assert_eq!(v["embedder"]["api_key_present"], false);
}

#[test]
fn extract_over_inline_units_writes_csv() {
    let llm = Arc::new(StubBackend::canned([r#"{"name": "Ada", "year": 1843}"#, "no json here", r#"{"name": "Grace", "year": 1952}"#]));
    let f = fixture_with(llm, "");
    let schema = json!([
        {"name": "name", "type": "string", "required": true},
        {"name": "year", "type": "integer"}
    ]);
    let (status, body) = f.post(
        "/extract",
        json!({"units": ["Ada wrote notes.", "Nothing here.", "Grace built compilers."], "schema": schema, "max_retries": 0}),
    );
    assert_eq!(status, 200, "{body}");
    let statuses: Vec<&str> = body["records"].as_array().unwrap().iter().map(|r| r["status"].as_str().unwrap()).collect();
    assert_eq!(statuses, ["ok", "failed", "ok"]);
    assert_eq!(body["records"][2]["record"]["year"], 1952);
    let csv = fs::read_to_string(body["csv_path"].as_str().unwrap()).unwrap();
    assert!(csv.starts_with("source_path,unit_index,status,name,year\r\n"));
    assert!(csv.contains(",2,ok,Grace,1952\r\n"));

    let (status, body) = f.post("/extract", json!({"schema": schema}));
    assert_eq!(status, 400);
    assert_api_error(&body, "invalid_request");
}

#[test]
fn extract_from_an_ingested_source() {
    let llm = Arc::new(StubBackend::canned([r#"{"topic": "radar"}"#]));
    let f = fixture_with(llm, "");
    f.ingest();
    let (status, body) = f.post(
        "/extract",
        json!({"source_path": f.doc("hypersonic.txt"), "unit": "sentence", "schema": [{"name": "topic", "type": "string"}]}),
    );
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["records"][0]["unit_ref"]["source_path"], f.doc("hypersonic.txt"));
    let (status, body) = f.post(
        "/extract",
        json!({"source_path": "/definitely/not/ingested.txt", "schema": [{"name": "topic", "type": "string"}]}),
    );
    assert_eq!(status, 404);
    assert_api_error(&body, "not_found");
}

#[test]
fn summarize_text_and_source() {
    let f = fixture_with(Arc::new(StubBackend::canned(["a short summary"])), "");
    let (status, s) = f.post("/summarize", json!({"text": "One small paragraph about radar budgets."}));
    assert_eq!(status, 200, "{s}");
    assert_eq!(s["strategy"], "map_reduce");
    assert_eq!(s["llm_calls"], 1);
    assert_eq!(s["text"], "a short summary");
    f.ingest();
    let (status, s) = f.post("/summarize", json!({"source_path": f.doc("budget.txt"), "concept": "defense budget"}));
    assert_eq!(status, 200, "{s}");
    assert_eq!(s["strategy"], "concept_focused");
    assert_eq!(s["units_used"], 1);
    let (status, body) = f.post("/summarize", json!({"text": "x", "strategy": "concept_focused"}));
    assert_eq!(status, 400);
    assert_api_error(&body, "invalid_request");
}

#[test]
fn classify_train_and_predict() {
    let f = fixture();
    let examples = json!([
        {"text": "missile radar launch", "label": "defense"},
        {"text": "radar fleet missile", "label": "defense"},
        {"text": "harvest wheat rain", "label": "farming"},
        {"text": "rain soil harvest", "label": "farming"}
    ]);
    let (status, trained) = f.post("/classify/train", json!({"kind": "tfidf_linear", "dataset": examples, "epochs": 200, "learning_rate": 1.0}));
    assert_eq!(status, 200, "{trained}");
    assert_eq!(trained["classes"], json!(["defense", "farming"]));
    let id = trained["model_id"].as_str().unwrap().to_string();
    assert_eq!(id.len(), 32);
    let (status, p) = f.post("/classify/predict", json!({"model_id": id, "text": "wheat harvest"}));
    assert_eq!(status, 200, "{p}");
    assert_eq!(p["label"], "farming");
    assert_eq!(p["model_id"], id);
    assert_eq!(p["scores"].as_array().unwrap().len(), 2);

    let (status, again) = f.post("/classify/train", json!({"kind": "tfidf_linear", "dataset": examples, "epochs": 200, "learning_rate": 1.0}));
    assert_eq!(status, 200);
    assert_eq!(again["model_id"], id);

    let (status, fewshot) = f.post("/classify/train", json!({"kind": "centroid_fewshot", "examples": examples}));
    assert_eq!(status, 200, "{fewshot}");
    let (_, p) = f.post("/classify/predict", json!({"model_id": fewshot["model_id"], "text": "missile radar launch"}));
    assert_eq!(p["label"], "defense");

    let (status, body) = f.post("/classify/predict", json!({"model_id": "0123456789abcdef0123456789abcdef", "text": "x"}));
    assert_eq!(status, 404);
    assert_api_error(&body, "not_found");
    let (status, body) = f.post("/classify/predict", json!({"model_id": "../../etc/passwd", "text": "x"}));
    assert_eq!(status, 404);
    assert_api_error(&body, "not_found");
    let (status, body) = f.post("/classify/train", json!({"kind": "svm", "examples": examples}));
    assert_eq!(status, 400);
    assert_api_error(&body, "invalid_request");
}

#[test]
fn http_backend_without_server_is_unavailable_not_hanging() {
    let f = fixture_with(
        docsift_cli::app::build_llm(&config_for(
            Path::new("/unused"),
            "[llm]\nbackend = http\nendpoint = http://127.0.0.1:9/v1/chat/completions\ntimeout_secs = 2\nmax_attempts = 1\n",
        ))
        .unwrap(),
        "",
    );
    f.ingest();
    let (status, body) = f.post("/ask", json!({"question": "budget"}));
    assert!(status == 502 || status == 503, "{status} {body}");
    assert!(body["code"].is_string());
}
