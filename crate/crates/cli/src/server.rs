//! HTTP inference service over one immutable checkpoint.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use editvq::corpus::Vocab;
use editvq::models::Model;
use editvq::training::Checkpoint;
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::commands::{load_model_checkpoint, ServeArgs};
use crate::config::announce;
use crate::error::{CliError, CliResult};
use crate::suggest::{suggest, SuggestError, SuggestRequest};

pub struct AppState {
    pub model: Model<f32>,
    pub vocab: Vocab,
    /// Checkpoint metadata without the vocabulary, pre-rendered.
    pub meta: Value,
    pub usage: Option<Vec<f64>>,
    pub requests: AtomicU64,
}

impl AppState {
    pub fn from_checkpoint(ck: &Checkpoint) -> CliResult<Self> {
        let model = ck.model()?;
        let mut meta = serde_json::to_value(&ck.meta).expect("metadata serializes");
        if let Value::Object(m) = &mut meta {
            m.remove("vocab");
            m.insert("parameters".into(), json!(model.store.numel()));
            m.insert("codebook_size".into(), json!(model.codebook_size()));
        }
        Ok(Self {
            usage: ck.usage().map(<[f64]>::to_vec),
            vocab: ck.meta.vocab.clone(),
            model,
            meta,
            requests: AtomicU64::new(0),
        })
    }
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

async fn health(State(s): State<Arc<AppState>>) -> Json<Value> {
    s.requests.fetch_add(1, Ordering::Relaxed);
    Json(json!({"status": "ok"}))
}

async fn model_info(State(s): State<Arc<AppState>>) -> Json<Value> {
    s.requests.fetch_add(1, Ordering::Relaxed);
    Json(s.meta.clone())
}

async fn codebook(State(s): State<Arc<AppState>>) -> Response {
    s.requests.fetch_add(1, Ordering::Relaxed);
    match &s.usage {
        Some(u) => {
            let entropy: f64 = u.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
            Json(json!({"usage": u, "perplexity": entropy.exp()})).into_response()
        }
        None => error(StatusCode::NOT_FOUND, format!("{} has no codebook", s.model.kind())),
    }
}

async fn suggest_handler(State(s): State<Arc<AppState>>, body: Bytes) -> Response {
    s.requests.fetch_add(1, Ordering::Relaxed);
    let req: SuggestRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")),
    };
    let state = s.clone();
    let result = tokio::task::spawn_blocking(move || suggest(&state.model, &state.vocab, &req)).await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(SuggestError::BadRequest(m))) => error(StatusCode::BAD_REQUEST, m),
        Ok(Err(SuggestError::TooLong(m))) => error(StatusCode::UNPROCESSABLE_ENTITY, m),
        Ok(Err(SuggestError::Internal(m))) => error(StatusCode::INTERNAL_SERVER_ERROR, m),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/model", get(model_info))
        .route("/codebook/usage", get(codebook))
        .route("/suggest", post(suggest_handler))
        .with_state(state);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(CorsLayer::permissive())
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr, static_dir: Option<&Path>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir)).await
}

pub fn serve_blocking(a: &ServeArgs) -> CliResult<()> {
    announce(
        "serve",
        &json!({"checkpoint": a.checkpoint, "addr": a.addr, "static_dir": a.static_dir}),
        0,
    );
    let addr: SocketAddr = a
        .addr
        .parse()
        .map_err(|e| CliError::Usage(format!("--addr {}: {e}", a.addr)))?;
    if let Some(d) = &a.static_dir {
        if !d.is_dir() {
            return Err(CliError::Data(format!("static directory {} does not exist", d.display())));
        }
    }
    let ck = load_model_checkpoint(&a.checkpoint)?;
    let state = Arc::new(AppState::from_checkpoint(&ck)?);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Data(e.to_string()))?;
    rt.block_on(serve(state, addr, a.static_dir.as_deref()))
        .map_err(|e| CliError::Data(format!("server on {addr}: {e}")))
}

