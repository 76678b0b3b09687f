//! Local document search and question answering.
//!
//! A [`store::Store`] holds chunked documents in a BM25 index, an HNSW
//! vector index, or both. The [`pipelines`] module builds question
//! answering, extraction, summarization and classification on top of it.
//! The guide in `book/` walks through each part; its listings run as
//! doctests of this crate.

pub mod codec;
pub mod dense;
pub mod dual;
pub mod ingest;
pub mod llm;
pub mod net;
pub mod pipelines;
pub mod sparse;
pub mod store;

#[cfg(any(test, feature = "testutil"))]
pub mod testutil;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/ingestion.md")]
    mod ingestion {}
    #[doc = include_str!("../../../book/src/keyword-search.md")]
    mod keyword_search {}
    #[doc = include_str!("../../../book/src/semantic-search.md")]
    mod semantic_search {}
    #[doc = include_str!("../../../book/src/hybrid-search.md")]
    mod hybrid_search {}
    #[doc = include_str!("../../../book/src/llm-backends.md")]
    mod llm_backends {}
    #[doc = include_str!("../../../book/src/pipelines.md")]
    mod pipelines {}
    #[doc = include_str!("../../../book/src/storage.md")]
    mod storage {}
}
