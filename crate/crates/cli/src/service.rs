//! JSON HTTP service over an [`App`].
//!
//! Every non-2xx response body is a single [`ApiError`] object, including
//! the ones axum generates itself (unknown route, wrong method, bad JSON).

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tokio::sync::Semaphore;

use crate::app::{App, AskRequest, ExtractRequest, IngestRequest, PredictRequest, SearchRequest, SummarizeRequest, TrainRequest};
use crate::error::{ApiError, AppError};

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body)).into_response()
    }
}

#[derive(Clone)]
struct ServiceState {
    app: Arc<App>,
    /// Bounds concurrent model and embedder work.
    limiter: Arc<Semaphore>,
}

type Reply<T> = Result<Json<T>, AppError>;

async fn run_blocking<T, F>(state: &ServiceState, limited: bool, f: F) -> Reply<T>
where
    T: Send + 'static,
    F: FnOnce(&App) -> Result<T, AppError> + Send + 'static,
{
    let _permit = if limited {
        Some(state.limiter.clone().acquire_owned().await.map_err(|e| AppError::internal(e.to_string()))?)
    } else {
        None
    };
    let app = state.app.clone();
    tokio::task::spawn_blocking(move || f(&app))
        .await
        .map_err(|e| AppError::internal(format!("worker failed: {e}")))?
        .map(Json)
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, AppError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| AppError::invalid(e.body_text()))
}

async fn health(State(s): State<ServiceState>) -> impl IntoResponse {
    Json(s.app.health())
}

async fn config(State(s): State<ServiceState>) -> impl IntoResponse {
    Json(s.app.config.redacted())
}

async fn ingest(State(s): State<ServiceState>, payload: Result<Json<IngestRequest>, JsonRejection>) -> Response {
    let req = match body(payload) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    let path = std::path::PathBuf::from(req.path);
    run_blocking(&s, false, move |app| app.ingest(&path, &mut |_| Ok(())))
        .await
        .into_response()
}

async fn search(State(s): State<ServiceState>, q: Result<Query<SearchRequest>, QueryRejection>) -> Response {
    let req = match q {
        Ok(Query(r)) => r,
        Err(e) => return AppError::invalid(e.body_text()).into_response(),
    };
    run_blocking(&s, true, move |app| app.search(&req)).await.into_response()
}

async fn json_op<Req, Res>(
    s: ServiceState,
    payload: Result<Json<Req>, JsonRejection>,
    f: fn(&App, &Req) -> Result<Res, AppError>,
) -> Response
where
    Req: Send + 'static,
    Res: Serialize + Send + 'static,
{
    match body(payload) {
        Ok(req) => run_blocking(&s, true, move |app| f(app, &req)).await.into_response(),
        Err(e) => e.into_response(),
    }
}

async fn ask(State(s): State<ServiceState>, p: Result<Json<AskRequest>, JsonRejection>) -> Response {
    json_op(s, p, App::ask).await
}

async fn extract(State(s): State<ServiceState>, p: Result<Json<ExtractRequest>, JsonRejection>) -> Response {
    json_op(s, p, |app, req| app.extract(req, None)).await
}

async fn summarize(State(s): State<ServiceState>, p: Result<Json<SummarizeRequest>, JsonRejection>) -> Response {
    json_op(s, p, App::summarize).await
}

async fn classify_train(State(s): State<ServiceState>, p: Result<Json<TrainRequest>, JsonRejection>) -> Response {
    json_op(s, p, App::train).await
}

async fn classify_predict(State(s): State<ServiceState>, p: Result<Json<PredictRequest>, JsonRejection>) -> Response {
    json_op(s, p, App::predict).await
}

async fn not_found() -> AppError {
    AppError::not_found("no such endpoint")
}

/// Rewrites framework-generated error bodies into `ApiError` objects.
async fn ensure_api_error(resp: Response) -> Response {
    let status = resp.status();
    let is_json = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .is_some_and(|v| v.as_bytes().starts_with(b"application/json"));
    if status.is_success() || is_json {
        return resp;
    }
    let code = match status {
        StatusCode::METHOD_NOT_ALLOWED => "method_not_allowed",
        StatusCode::NOT_FOUND => "not_found",
        StatusCode::PAYLOAD_TOO_LARGE => "payload_too_large",
        StatusCode::UNSUPPORTED_MEDIA_TYPE => "unsupported_media_type",
        s if s.is_server_error() => "internal",
        _ => "invalid_request",
    };
    let message = status.canonical_reason().unwrap_or("error").to_string();
    (status, Json(ApiError { code: code.into(), message, detail: None })).into_response()
}

/// Logs method, path, status and latency; never bodies or headers.
async fn access_log(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let start = Instant::now();
    let resp = next.run(req).await;
    tracing::info!(
        method = %method,
        path = %path,
        status = resp.status().as_u16(),
        elapsed_ms = start.elapsed().as_millis() as u64,
        "request"
    );
    resp
}

pub fn router(app: Arc<App>) -> Router {
    let limiter = Arc::new(Semaphore::new(app.config.server.max_in_flight));
    let state = ServiceState { app, limiter };
    Router::new()
        .route("/health", get(health))
        .route("/config", get(config))
        .route("/ingest", post(ingest))
        .route("/search", get(search))
        .route("/ask", post(ask))
        .route("/extract", post(extract))
        .route("/summarize", post(summarize))
        .route("/classify/train", post(classify_train))
        .route("/classify/predict", post(classify_predict))
        .fallback(not_found)
        .layer(middleware::map_response(ensure_api_error))
        .layer(middleware::from_fn(access_log))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    app: Arc<App>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app)).with_graceful_shutdown(shutdown).await
}

/// A service running on its own runtime thread; stops when dropped.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl BackgroundServer {
    /// Binds `addr` (port 0 picks a free port) and serves in the background.
    pub fn start(app: Arc<App>, addr: SocketAddr) -> std::io::Result<BackgroundServer> {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            rt.block_on(serve(app, listener, async {
                let _ = rx.await;
            }))
        });
        Ok(BackgroundServer {
            addr,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
