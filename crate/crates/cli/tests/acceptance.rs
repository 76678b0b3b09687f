//! Acceptance run: one PASS/FAIL line per primary criterion.
//!
//! Each check panics on the first violated condition; the panic message
//! becomes the FAIL reason. Exit status is nonzero if any check fails.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use docsift::dense::{Embedder, EmbeddingVector, HnswIndex, HnswParams};
use docsift::dual::rrf_fuse;
use docsift::ingest::{chunk_id, Chunk};
use docsift::llm::{complete_structured, ExtractionSchema, FieldType, PromptTemplate, SchemaField, StubBackend};
use docsift::net::{open_socket_count, outbound_requests};
use docsift::pipelines::{
    extract, predict_vector, summarize_map_reduce, templates, tfidf_problem, train_centroid, train_tfidf_linear,
    write_csv, MapReduceTemplates, RecordStatus, SummarizeParams, Unit,
};
use docsift::sparse::query::ParseErrorKind;
use docsift::sparse::{parse_query, Bm25Params, QueryAst, SparseIndex};
use docsift::store::{Manifest, Store};
use docsift::testutil::{anchor_clusters, separable_toy, FnBackend};
use docsift_cli::app::{build_embedder, App, AskRequest};
use docsift_cli::config::Config;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Check = fn() -> String;

fn ensure(cond: bool, msg: impl FnOnce() -> String) {
    if !cond {
        panic!("{}", msg());
    }
}

fn within(limit: Duration, start: Instant) -> String {
    let took = start.elapsed();
    ensure(took <= limit, || format!("took {took:.2?}, limit {limit:?}"));
    format!("{took:.2?}")
}

// ---------------------------------------------------------------- BM25

const VOCAB: [&str; 16] = [
    "radar", "missile", "budget", "navy", "army", "space", "cyber", "drone", "fleet", "launch", "orbit", "satellite",
    "treaty", "sensor", "supply", "doctrine",
];

fn bm25_brute(docs: &[Vec<&str>], query: &[&str]) -> Vec<(usize, f64)> {
    let (k1, b) = (1.2, 0.75);
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut q = query.to_vec();
    q.sort_unstable();
    q.dedup();
    let mut out = Vec::new();
    for (i, d) in docs.iter().enumerate() {
        let mut score = 0.0;
        let mut matched = false;
        for t in &q {
            let tf = d.iter().filter(|w| *w == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            matched = true;
            let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avgdl));
        }
        if matched {
            out.push((i, score));
        }
    }
    out
}

fn bm25_oracle() -> String {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let docs: Vec<Vec<&str>> = (0..100)
        .map(|_| (0..rng.gen_range(3..60)).map(|_| *VOCAB.choose(&mut rng).unwrap()).collect())
        .collect();
    let mut index = SparseIndex::new();
    let mut row_of = HashMap::new();
    for (i, d) in docs.iter().enumerate() {
        let text = d.join(" ");
        let path = format!("/corpus/{i:03}.txt");
        let len = text.chars().count();
        let id = chunk_id(&path, 0, len);
        row_of.insert(id.clone(), i);
        index
            .add_chunk(Chunk {
                chunk_id: id,
                source_path: path,
                start_offset: 0,
                end_offset: len,
                text,
                seq: 0,
                doc_sha256: String::new(),
            })
            .unwrap();
    }
    let mut queries: Vec<Vec<&str>> = VOCAB.iter().map(|t| vec![*t]).collect();
    for _ in 0..40 {
        queries.push((0..rng.gen_range(2..5)).map(|_| *VOCAB.choose(&mut rng).unwrap()).collect());
    }
    let mut worst: f64 = 0.0;
    for q in &queries {
        let ast = parse_query(&q.join(" OR ")).unwrap();
        let page = index.search(&ast, 1, 1000, &Bm25Params::default()).unwrap();
        let mut want = bm25_brute(&docs, q);
        let oracle_score: HashMap<usize, f64> = want.iter().copied().collect();
        want.sort_by(|a, b| b.1.total_cmp(&a.1));
        ensure(page.hits.len() == want.len(), || format!("{q:?}: {} hits, oracle {}", page.hits.len(), want.len()));
        for (hit, (row, score)) in page.hits.iter().zip(&want) {
            let gap = (hit.score - score).abs();
            worst = worst.max(gap);
            ensure(gap <= 1e-9, || format!("{q:?}: score gap {gap:e}"));
            // order may differ from the oracle only between equal scores
            let got_row = row_of[&hit.chunk_id];
            ensure(got_row == *row || (oracle_score[&got_row] - score).abs() <= 1e-9, || format!("{q:?}: rank mismatch"));
        }
    }
    format!("{} queries, max score gap {worst:.1e}, {}", queries.len(), within(Duration::from_secs(5), start))
}

// ---------------------------------------------------------------- query language

fn word(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(1..8);
    (0..len).map(|_| *b"abcdefghijklmnopqrstuvwxyz0123456789".choose(rng).unwrap() as char).collect()
}

fn random_ast(rng: &mut ChaCha8Rng, depth: u32) -> QueryAst {
    let leaf = depth == 0 || rng.gen_bool(0.4);
    if leaf {
        return match rng.gen_range(0..6) {
            0..=2 => QueryAst::Term(word(rng)),
            3 | 4 => QueryAst::Phrase((0..rng.gen_range(1..4)).map(|_| word(rng)).collect()),
            _ => {
                let name = if rng.gen_bool(0.5) { "source" } else { "ext" };
                let value = if rng.gen_bool(0.5) { word(rng) } else { format!("{} {}/x.txt", word(rng), word(rng)) };
                QueryAst::field(name, &value)
            }
        };
    }
    let kids = |rng: &mut ChaCha8Rng| (0..rng.gen_range(2..4)).map(|_| random_ast(rng, depth - 1)).collect();
    match rng.gen_range(0..3) {
        0 => QueryAst::And(kids(rng)),
        1 => QueryAst::Or(kids(rng)),
        _ => QueryAst::Not(Box::new(random_ast(rng, depth - 1))),
    }
}

fn query_language() -> String {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let n = 250;
    for i in 0..n {
        let ast = random_ast(&mut rng, 4);
        let printed = ast.to_string();
        let back = parse_query(&printed).unwrap_or_else(|e| panic!("ast {i} printed as {printed:?}: {e}"));
        ensure(back == ast, || format!("ast {i}: {printed:?} reparsed differently"));
        ensure(back.to_string() == printed, || format!("ast {i}: print not stable"));
    }
    use ParseErrorKind::*;
    let fixtures: [(&str, ParseErrorKind, usize); 12] = [
        ("", EmptyQuery, 0),
        ("   ", EmptyQuery, 0),
        ("radar \"open phrase", UnbalancedQuote, 6),
        ("(radar OR navy", UnbalancedParen, 0),
        ("radar)", UnbalancedParen, 5),
        ("radar AND", DanglingOperator, 6),
        ("OR radar", DanglingOperator, 0),
        ("title:radar", UnknownField, 0),
        ("radar ext:", EmptyFieldValue, 6),
        ("radar ( )", EmptyGroup, 6),
        ("radar \"\"", EmptyPhrase, 6),
        ("-- ??", NoSearchableTerms, 0),
    ];
    for (q, kind, pos) in fixtures {
        let e = parse_query(q).err().unwrap_or_else(|| panic!("{q:?} parsed"));
        ensure((e.kind, e.position) == (kind, pos), || format!("{q:?}: got {:?} at {}", e.kind, e.position));
    }
    format!("{n} generated ASTs, 12 error fixtures, {}", within(Duration::from_secs(5), start))
}

// ---------------------------------------------------------------- HNSW

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    EmbeddingVector((0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()).normalized()
}

fn hnsw_recall() -> String {
    let start = Instant::now();
    let (n, dim, k) = (1000, 64, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut index = HnswIndex::new(dim, HnswParams::default()).unwrap();
    let vectors: Vec<EmbeddingVector> = (0..n).map(|_| unit(&mut rng, dim)).collect();
    for (id, v) in vectors.iter().enumerate() {
        index.insert(id as u64, v.clone()).unwrap();
    }
    index.check_invariants().unwrap_or_else(|e| panic!("invariants: {e:?}"));
    let queries: Vec<EmbeddingVector> = (0..100).map(|_| unit(&mut rng, dim)).collect();
    let ef = index.params().ef_search;
    let mut found = 0;
    for q in &queries {
        // exhaustive cosine ranking, independent of the index
        let mut exact: Vec<(usize, f64)> = vectors.iter().enumerate().map(|(i, v)| (i, q.cosine(v))).collect();
        exact.sort_by(|a, b| b.1.total_cmp(&a.1));
        let truth: HashSet<u64> = exact[..k].iter().map(|(i, _)| *i as u64).collect();
        found += index.search(q, k, ef).unwrap().iter().filter(|h| truth.contains(&h.0)).count();
    }
    let recall = found as f64 / (queries.len() * k) as f64;
    ensure(recall >= 0.95, || format!("recall@10 {recall:.3} < 0.95"));
    let (v, g) = index.encode();
    let back = HnswIndex::decode(&v, &g).unwrap();
    for q in &queries {
        ensure(back.search(q, k, ef).unwrap() == index.search(q, k, ef).unwrap(), || "round-trip results differ".into());
    }
    format!("recall@10 {recall:.3}, {}", within(Duration::from_secs(60), start))
}

// ---------------------------------------------------------------- RRF

fn rrf_fusion() -> String {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let pool: Vec<String> = (0..60).map(|i| format!("c{i:02}")).collect();
    let worse = |a: Option<usize>, b: Option<usize>| match (a, b) {
        (Some(x), Some(y)) => x > y,
        (None, Some(_)) => true,
        _ => false,
    };
    let cases = 50;
    for case in 0..cases {
        let pick = |rng: &mut ChaCha8Rng| {
            let mut p = pool.clone();
            p.shuffle(rng);
            p.truncate(rng.gen_range(0..40));
            p
        };
        let s = pick(&mut rng);
        let d = pick(&mut rng);
        let k = rng.gen_range(1..120u32);
        let mut want: HashMap<&str, f64> = HashMap::new();
        for list in [&s, &d] {
            for (i, id) in list.iter().enumerate() {
                *want.entry(id).or_default() += 1.0 / (k as f64 + i as f64 + 1.0);
            }
        }
        let mut order: Vec<(&str, f64)> = want.iter().map(|(id, sc)| (*id, *sc)).collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        let fused = rrf_fuse(&s, &d, k);
        let got: Vec<&str> = fused.iter().map(|f| f.chunk_id.as_str()).collect();
        let expect: Vec<&str> = order.iter().map(|o| o.0).collect();
        ensure(got == expect, || format!("case {case}: ordering differs"));
        for f in &fused {
            ensure((f.score - want[f.chunk_id.as_str()]).abs() < 1e-15, || format!("case {case}: score of {}", f.chunk_id));
        }
        for (i, a) in fused.iter().enumerate() {
            for (j, b) in fused.iter().enumerate() {
                let dominates = !worse(a.sparse_rank, b.sparse_rank)
                    && !worse(a.dense_rank, b.dense_rank)
                    && (worse(b.sparse_rank, a.sparse_rank) || worse(b.dense_rank, a.dense_rank));
                if dominates {
                    ensure(a.score > b.score && i < j, || format!("case {case}: dominance violated"));
                }
            }
        }
    }
    format!("{cases} random ranking pairs, {}", within(Duration::from_secs(5), start))
}

// ---------------------------------------------------------------- RAG

const CORPUS: [(&str, &str); 5] = [
    ("budget.txt", "The defense budget grew four percent, mostly for shipbuilding and maintenance."),
    ("space.txt", "Launch cadence doubled after the new pad opened; orbital debris remains a concern."),
    ("cyber.txt", "Red team exercises found weak passwords on several logistics servers."),
    ("hypersonic.txt", "Hypersonic glide vehicle tests exposed gaps in current tracking radars."),
    ("training.txt", "Recruit training now includes simulator hours before live exercises."),
];

fn write_corpus(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    for (name, text) in CORPUS {
        fs::write(dir.join(name), text).unwrap();
    }
}

fn store_config(store: &Path) -> Config {
    let mut c = Config::default();
    c.store_dir = store.to_path_buf();
    c
}

fn end_to_end_rag() -> String {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let docs = tmp.path().join("docs");
    write_corpus(&docs);
    let sockets = open_socket_count();
    let requests = outbound_requests();
    let app = App::open(store_config(&tmp.path().join("store")), true).unwrap();
    let report = app.ingest(&docs, &mut |_| Ok(())).unwrap();
    ensure(report.files_ingested == 5, || format!("{} files ingested", report.files_ingested));
    let answer = app
        .ask(&AskRequest {
            question: "What did the hypersonic tests show?".into(),
            k: None,
        })
        .unwrap();
    let key = docs.join("hypersonic.txt").canonicalize().unwrap();
    ensure(answer.sources.iter().any(|s| Path::new(&s.source_path) == key), || {
        format!("sources {:?}", answer.sources.iter().map(|s| &s.source_path).collect::<Vec<_>>())
    });
    ensure(answer.answer_text.starts_with("STUB:"), || "answer is not from the stub".into());
    ensure(outbound_requests() == requests, || "outbound requests were made".into());
    ensure(open_socket_count() == sockets, || format!("sockets {sockets:?} -> {:?}", open_socket_count()));
    format!(
        "{} store, {} sources, sockets {} -> {}, {}",
        app.store().kind(),
        answer.sources.len(),
        sockets.map_or("n/a".into(), |s| s.to_string()),
        open_socket_count().map_or("n/a".into(), |s| s.to_string()),
        within(Duration::from_secs(10), start)
    )
}

// ---------------------------------------------------------------- map-reduce

fn summarize_params(max_reduce_chars: usize) -> SummarizeParams {
    let mut p = SummarizeParams::default();
    p.chunking.chunk_size = 4;
    p.chunking.overlap = 0;
    p.chunking.snap_to_word_boundary = false;
    p.max_reduce_chars = max_reduce_chars;
    p
}

fn map_reduce_law() -> String {
    for n in 1..=10 {
        let doc: String = (0..n).map(|i| char::from(b'a' + i as u8).to_string().repeat(4)).collect();
        let stub = StubBackend::canned(["short"]);
        let s = summarize_map_reduce(&doc, &stub, &MapReduceTemplates::general(), &summarize_params(8000)).unwrap();
        let law = if n == 1 { 1 } else { n + s.reduce_rounds };
        ensure(stub.call_count() == law && s.llm_calls == law, || {
            format!("{n} units: {} calls, law says {law}", stub.call_count())
        });
        ensure((n == 1) == (s.reduce_rounds == 0), || format!("{n} units: {} reduce rounds", s.reduce_rounds));
    }
    let long = "w".repeat(3000);
    let stub = StubBackend::canned([long.as_str()]);
    let doc: String = (0..8).map(|i| char::from(b'a' + i as u8).to_string().repeat(4)).collect();
    let s = summarize_map_reduce(&doc, &stub, &MapReduceTemplates::general(), &summarize_params(8000)).unwrap();
    ensure(s.reduce_rounds >= 2, || format!("oversized fixture: {} reduce rounds", s.reduce_rounds));
    ensure(stub.call_count() == 8 + s.reduce_rounds, || "oversized fixture breaks the law".into());
    format!("units 1..10 obey the law, oversized fixture took {} reduce rounds", s.reduce_rounds)
}

// ---------------------------------------------------------------- extraction

fn schema() -> ExtractionSchema {
    ExtractionSchema::new(vec![
        SchemaField::new("name", FieldType::String, true, ""),
        SchemaField::new("count", FieldType::Integer, false, ""),
        SchemaField::new("tags", FieldType::StringList, false, ""),
    ])
    .unwrap()
}

fn structured_extraction() -> String {
    let mut sequences = 0;
    for failures in 0..5usize {
        for max_retries in 0..4u32 {
            let mut script = vec!["not json".to_string(); failures];
            script.push(r#"{"name": "ok"}"#.into());
            let stub = StubBackend::canned(script);
            let out = complete_structured("q", &schema(), &stub, max_retries);
            let want = (1 + failures).min(1 + max_retries as usize);
            ensure(stub.call_count() == want, || {
                format!("{failures} failures, max_retries {max_retries}: {} calls, want {want}", stub.call_count())
            });
            ensure(out.is_ok() == (failures <= max_retries as usize), || "wrong outcome".into());
            sequences += 1;
        }
    }
    let bad = [2usize, 6];
    let llm = FnBackend::new(move |prompt: &str| {
        let i: usize = prompt.split("unit-").nth(1).unwrap()[..2].parse().unwrap();
        if bad.contains(&i) {
            "sorry, no".into()
        } else {
            serde_json::json!({"name": format!("Item, \"{i}\"\nline two"), "count": i, "tags": ["x", "y"]}).to_string()
        }
    });
    let units: Vec<Unit> = (0..10)
        .map(|i| Unit {
            source_path: "/docs/a.txt".into(),
            unit_index: i,
            unit_text: format!("unit-{i:02}"),
        })
        .collect();
    let template = PromptTemplate::new(templates::EXTRACT).unwrap();
    let records = extract(&units, &template, &schema(), &llm, 2).unwrap();
    let failed: Vec<usize> = records.iter().filter(|r| r.status == RecordStatus::Failed).map(|r| r.unit_ref.unit_index).collect();
    ensure(failed == bad, || format!("failed units {failed:?}"));
    ensure(records.iter().map(|r| r.unit_ref.unit_index).eq(0..10), || "records out of order".into());
    ensure(records.iter().filter(|r| bad.contains(&r.unit_ref.unit_index)).all(|r| r.attempts == 3), || "failed units not retried twice".into());
    let mut buf = Vec::new();
    write_csv(&records, &schema(), &mut buf).unwrap();
    let mut reader = csv::Reader::from_reader(buf.as_slice());
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    ensure(rows.len() == 10, || format!("{} csv rows", rows.len()));
    for (row, rec) in rows.iter().zip(&records) {
        let name = rec.record.as_ref().map_or(String::new(), |m| m["name"].as_str().unwrap().to_string());
        let count = rec.record.as_ref().map_or(String::new(), |m| m["count"].to_string());
        let tags = if rec.record.is_some() { "x; y".to_string() } else { String::new() };
        let want = [rec.unit_ref.source_path.clone(), rec.unit_ref.unit_index.to_string(), rec.status.as_str().into(), name, count, tags];
        ensure(row.iter().eq(want.iter().map(String::as_str)), || format!("csv row {row:?} != {want:?}"));
    }
    format!("{sequences} scripted sequences, 8 ok / 2 failed in order, csv re-parsed")
}

// ---------------------------------------------------------------- classifiers

fn classifiers() -> String {
    let start = Instant::now();
    let per_class = 45;
    let data = anchor_clusters(500, 16, 3, per_class, 0.2);
    let (train, holdout): (Vec<_>, Vec<_>) = data.into_iter().enumerate().partition(|(i, _)| i % per_class < 5);
    let train: Vec<_> = train.into_iter().map(|(_, x)| x).collect();
    let model = train_centroid(&train, "acceptance:anchors").unwrap();
    let correct = holdout.iter().filter(|(_, (v, l))| &predict_vector(&model, v).unwrap().label == l).count();
    let acc = correct as f64 / holdout.len() as f64;
    ensure(acc >= 0.9, || format!("centroid holdout accuracy {acc:.3}"));

    let toy = separable_toy();
    let linear = train_tfidf_linear(&toy, 200, 1.0, 1).unwrap();
    let train_acc = toy.iter().filter(|(t, l)| &linear.predict(t, None).unwrap().label == l).count() as f64 / toy.len() as f64;
    ensure(train_acc == 1.0, || format!("tfidf training accuracy {train_acc}"));

    let three: Vec<(String, String)> = [("radar budget radar", "a"), ("wheat harvest rain", "b"), ("budget for wheat", "c")]
        .iter()
        .map(|(t, l)| (t.to_string(), l.to_string()))
        .collect();
    let classes: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
    let (vocab, _, problem) = tfidf_problem(&three, &classes);
    let mut rng = ChaCha8Rng::seed_from_u64(501);
    let w: Vec<Vec<f64>> = (0..3).map(|_| (0..vocab.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (gw, gb) = problem.gradient(&w, &b);
    let h = 1e-5;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    for c in 0..3 {
        for j in 0..vocab.len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p[c][j] += h;
            m[c][j] -= h;
            worst = worst.max(rel(gw[c][j], (problem.loss(&p, &b) - problem.loss(&m, &b)) / (2.0 * h)));
        }
        let (mut p, mut m) = (b.clone(), b.clone());
        p[c] += h;
        m[c] -= h;
        worst = worst.max(rel(gb[c], (problem.loss(&w, &p) - problem.loss(&w, &m)) / (2.0 * h)));
    }
    ensure(worst <= 1e-5, || format!("gradient relative gap {worst:e}"));
    format!(
        "holdout {acc:.3}, tfidf train {train_acc:.1}, gradient gap {worst:.1e}, {}",
        within(Duration::from_secs(30), start)
    )
}

// ---------------------------------------------------------------- crash safety

fn copy_dir(from: &Path, to: &Path) {
    for entry in walkdir::WalkDir::new(from) {
        let entry = entry.unwrap();
        let target = to.join(entry.path().strip_prefix(from).unwrap());
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target).unwrap();
        } else {
            fs::copy(entry.path(), &target).unwrap();
        }
    }
}

fn docsift(store: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_docsift"));
    c.arg("--store").arg(store).env_remove("DOCSIFT_CONFIG").env_remove("DOCSIFT_FAULT_COMMIT_STEP");
    c
}

fn crash_safety() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let docs = tmp.path().join("docs");
    write_corpus(&docs);
    let base = tmp.path().join("base");
    assert!(docsift(&base).arg("init").output().unwrap().status.success());
    assert!(docsift(&base).arg("ingest").arg(&docs).output().unwrap().status.success());
    let embedder: Arc<dyn Embedder> = build_embedder(&Config::default()).unwrap();
    let prior: Manifest = Store::open(&base, embedder.clone()).unwrap().manifest().clone();

    fs::write(docs.join("budget.txt"), "The budget was revised: radar procurement moved to next year.").unwrap();
    fs::write(docs.join("logistics.txt"), "Fuel depots were consolidated to shorten supply lines.").unwrap();

    // uninterrupted reference run, recording the commit steps
    let reference = tmp.path().join("reference");
    copy_dir(&base, &reference);
    let mut steps = Vec::new();
    let mut store = Store::open(&reference, embedder.clone()).unwrap();
    store
        .ingest_with_hook(&docs, &Config::default().chunking, &mut |s| {
            steps.push(s.to_string());
            Ok(())
        })
        .unwrap();
    let next = store.manifest().clone();
    let commit_point = steps.iter().position(|s| s == "journal-written").unwrap();

    let trials = 20;
    let (mut at_prior, mut rolled_forward) = (0, 0);
    for trial in 0..trials {
        let step = trial % steps.len() + 1;
        let dir = tmp.path().join(format!("trial{trial}"));
        copy_dir(&base, &dir);
        let out = docsift(&dir)
            .arg("ingest")
            .arg(&docs)
            .env("DOCSIFT_FAULT_COMMIT_STEP", step.to_string())
            .output()
            .unwrap();
        ensure(!out.status.success() && out.status.code().is_none(), || format!("trial {trial}: child was not killed"));
        let reopened = Store::open(&dir, embedder.clone()).unwrap_or_else(|e| panic!("trial {trial}: store not loadable: {e}"));
        let m = reopened.manifest();
        let committed = step > commit_point;
        let want = if committed { &next } else { &prior };
        ensure(m == want, || format!("trial {trial} (killed at {}): unexpected manifest", steps[step - 1]));
        let listed: usize = m.files.iter().map(|f| f.chunk_count).sum();
        ensure(reopened.chunk_count() == listed, || format!("trial {trial}: index and manifest disagree"));
        if committed {
            rolled_forward += 1;
        } else {
            at_prior += 1;
        }
    }
    format!(
        "{trials}/{trials} loadable; {at_prior} killed before the commit point kept the prior manifest, \
         {rolled_forward} killed after it hold the newly committed manifest"
    )
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 9] = [
        ("bm25_oracle_equivalence", bm25_oracle),
        ("query_language_round_trip_and_errors", query_language),
        ("hnsw_recall_at_10", hnsw_recall),
        ("rrf_fusion_formula_and_dominance", rrf_fusion),
        ("end_to_end_ask_offline", end_to_end_rag),
        ("map_reduce_call_count_law", map_reduce_law),
        ("structured_extraction_retries_and_csv", structured_extraction),
        ("classifiers_accuracy_and_gradient", classifiers),
        ("crash_safety_kill_injection", crash_safety),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in checks {
        match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(detail) => println!("PASS  {name:<40} {detail}"),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL  {name:<40} {msg}");
            }
        }
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
