//! Command-line interface and HTTP service for a docsift store.
//!
//! The configuration, command-line and HTTP chapters of the guide in
//! `book/` run as doctests of this crate.

pub mod app;
pub mod cli;
pub mod config;
pub mod error;
pub mod service;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/http-api.md")]
    mod http_api {}
}
