use docsift_cli::config::{Config, ConfigError};

const FIXTURES: [&str; 10] = [
    "",
    "# only a comment\n\n",
    "store_dir = /var/lib/docsift\nstore_kind = sparse\n",
    "store_dir = \"dir with spaces/and \\\"quotes\\\"\"\n[chunking]\nchunk_size = 300\noverlap = 30\nsnap_to_word_boundary = false\n",
    "[bm25]\nk1 = 0.9\nb = 0.4\n[fusion]\nmethod = rrf\nrrf_k = 10\nk_dense = 20\nk_sparse = 30\n",
    "[hnsw]\nm = 8\nef_construction = 100\nef_search = 40\nrng_seed = 7\n",
    "[hnsw]\nm = 32\nlevel_mult = 0.25\n",
    "[llm]\nbackend = http\nendpoint = http://127.0.0.1:8080/v1/chat/completions\nmodel = llama-3-8b\napi_key_env = LLM_KEY\ntimeout_secs = 30\nmax_attempts = 5\n",
    "[embedder]\nkind = remote\ndim = 384\nendpoint = http://localhost:9000/v1/embeddings\nmodel = \"mini lm\"\n",
    "store_kind = dense\n[server]\nbind_addr = 0.0.0.0\nport = 9100\nmax_in_flight = 2\nallow_remote_bind = true\n\n# trailing comment\n",
];

#[test]
fn every_fixture_round_trips() {
    for (i, text) in FIXTURES.iter().enumerate() {
        let c = Config::parse(text).unwrap_or_else(|e| panic!("fixture {i}: {e}"));
        let printed = c.to_file_string();
        let back = Config::parse(&printed).unwrap_or_else(|e| panic!("fixture {i} reprint: {e}\n{printed}"));
        assert_eq!(back, c, "fixture {i}");
        assert_eq!(back.to_file_string(), printed, "fixture {i}");
    }
}

#[test]
fn empty_file_is_all_defaults() {
    let c = Config::parse("").unwrap();
    assert_eq!(c, Config::default());
    assert_eq!(c.embedder.dim, 256);
    assert_eq!(c.server.port, 8000);
    assert_eq!(c.server.max_in_flight, 4);
    assert!(c.server.bind_addr.is_loopback());
    assert!((c.bm25.k1 - 1.2).abs() < 1e-12 && (c.bm25.b - 0.75).abs() < 1e-12);
    assert!((c.hnsw.level_mult - 1.0 / (c.hnsw.m as f64).ln()).abs() < 1e-12);
}

#[test]
fn level_mult_follows_m_unless_set() {
    let c = Config::parse("[hnsw]\nm = 8\n").unwrap();
    assert!((c.hnsw.level_mult - 1.0 / 8f64.ln()).abs() < 1e-12);
}

#[test]
fn errors_fail_closed() {
    let cases: [(&str, &str); 9] = [
        ("[llm]\nbackend = http\n", "invalid"),
        ("[embedder]\nkind = remote\n", "invalid"),
        ("[server]\nbind_addr = 0.0.0.0\n", "invalid"),
        ("colour = blue\n", "unknown"),
        ("[mystery]\nx = 1\n", "unknown"),
        ("[llm]\nbakend = stub\n", "unknown"),
        ("store_kind = sparse\nstore_kind = dense\n", "parse"),
        ("[chunking\n", "parse"),
        ("[chunking]\nchunk_size = lots\n", "invalid"),
    ];
    for (text, want) in cases {
        let err = Config::parse(text).and_then(|c| c.validate().map(|_| c)).unwrap_err();
        let got = match err {
            ConfigError::Parse { .. } => "parse",
            ConfigError::UnknownKey(..) => "unknown",
            ConfigError::InvalidValue { .. } => "invalid",
            other => panic!("{text:?}: {other}"),
        };
        assert_eq!(got, want, "{text:?}");
    }
}

#[test]
fn parse_errors_name_the_line() {
    match Config::parse("# header\n\n[chunking]\nchunk_size 300\n").unwrap_err() {
        ConfigError::Parse { line, .. } => assert_eq!(line, 4),
        other => panic!("{other}"),
    }
}
