//! Accounting for outbound network activity.
//!
//! Every HTTP request issued by this crate is counted here first, so tests
//! and operators can confirm that an offline configuration stays offline.

use std::sync::atomic::{AtomicUsize, Ordering};

static OUTBOUND_REQUESTS: AtomicUsize = AtomicUsize::new(0);

pub(crate) fn record_outbound_request() {
    OUTBOUND_REQUESTS.fetch_add(1, Ordering::SeqCst);
}

/// Total outbound HTTP requests attempted by this process.
pub fn outbound_requests() -> usize {
    OUTBOUND_REQUESTS.load(Ordering::SeqCst)
}

/// Open socket descriptors of the current process, where the platform
/// exposes them (Linux `/proc`). `None` elsewhere.
pub fn open_socket_count() -> Option<usize> {
    let entries = std::fs::read_dir("/proc/self/fd").ok()?;
    Some(
        entries
            .filter_map(Result::ok)
            .filter_map(|e| std::fs::read_link(e.path()).ok())
            .filter(|target| target.to_string_lossy().starts_with("socket:"))
            .count(),
    )
}

pub(crate) fn excerpt(body: &str) -> String {
    const MAX: usize = 300;
    match body.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}…", &body[..i]),
        None => body.to_string(),
    }
}
