//! HTTP JSON facade over frozen bundles.
//!
//! | method | path             | body                 |
//! |--------|------------------|----------------------|
//! | POST   | `/api/generate`  | [`GenerateRequest`]  |
//! | POST   | `/api/predict`   | [`PredictRequest`]   |
//! | GET    | `/api/materials` |                      |
//! | GET    | `/api/health`    |                      |

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use crate::error::{Error, Result};
use crate::pipeline::{
    materials, Bundles, FieldError, GenerateRequest, PredictRequest, MAX_SAFE_SEED,
};

/// Error body of every non-2xx response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default)]
    pub fields: Vec<FieldError>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    /// `loading`, `ready` or `failed`.
    pub status: String,
    pub dataset_version: Option<String>,
    /// Content hash per bundle file.
    pub bundles: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

enum Slot {
    Loading,
    Ready(Arc<Bundles>, BTreeMap<String, String>),
    Failed(String),
}

/// Shared, read-mostly service state. Bundles are installed once.
#[derive(Clone)]
pub struct AppState {
    slot: Arc<RwLock<Slot>>,
}

impl AppState {
    pub fn loading() -> Self {
        AppState {
            slot: Arc::new(RwLock::new(Slot::Loading)),
        }
    }

    pub fn ready(bundles: Bundles) -> Self {
        let s = AppState::loading();
        s.install(bundles);
        s
    }

    pub fn install(&self, bundles: Bundles) {
        let hashes = bundles.fingerprint();
        *self.slot.write().expect("state lock") = Slot::Ready(Arc::new(bundles), hashes);
    }

    pub fn fail(&self, msg: String) {
        *self.slot.write().expect("state lock") = Slot::Failed(msg);
    }

    fn bundles(&self) -> Option<Arc<Bundles>> {
        match &*self.slot.read().expect("state lock") {
            Slot::Ready(b, _) => Some(Arc::clone(b)),
            _ => None,
        }
    }

    pub fn health(&self) -> Health {
        match &*self.slot.read().expect("state lock") {
            Slot::Loading => Health {
                status: "loading".into(),
                dataset_version: None,
                bundles: BTreeMap::new(),
                error: None,
            },
            Slot::Ready(b, h) => Health {
                status: "ready".into(),
                dataset_version: b.dataset_version.clone(),
                bundles: h.clone(),
                error: None,
            },
            Slot::Failed(e) => Health {
                status: "failed".into(),
                dataset_version: None,
                bundles: BTreeMap::new(),
                error: Some(e.clone()),
            },
        }
    }
}

fn error(status: StatusCode, msg: impl Into<String>, fields: Vec<FieldError>) -> Response {
    (
        status,
        Json(ErrorBody {
            error: msg.into(),
            fields,
        }),
    )
        .into_response()
}

fn invalid(fields: Vec<FieldError>) -> Response {
    let msg = fields
        .iter()
        .map(|f| format!("{}: {}", f.field, f.message))
        .collect::<Vec<_>>()
        .join("; ");
    error(StatusCode::BAD_REQUEST, msg, fields)
}

fn not_loaded() -> Response {
    error(
        StatusCode::SERVICE_UNAVAILABLE,
        "model bundles are not loaded",
        Vec::new(),
    )
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> std::result::Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| {
        error(
            StatusCode::BAD_REQUEST,
            format!("invalid request body: {e}"),
            Vec::new(),
        )
    })
}

async fn generate(State(state): State<AppState>, body: Bytes) -> Response {
    let req: GenerateRequest = match parse(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let resolved = match req.resolve() {
        Ok(r) => r,
        Err(fields) => return invalid(fields),
    };
    let Some(bundles) = state.bundles() else {
        return not_loaded();
    };
    let seed = resolved
        .seed
        .unwrap_or_else(|| rand::random::<u64>() % MAX_SAFE_SEED);
    match tokio::task::spawn_blocking(move || bundles.generate(&resolved, seed)).await {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), Vec::new()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), Vec::new()),
    }
}

async fn predict(State(state): State<AppState>, body: Bytes) -> Response {
    let req: PredictRequest = match parse(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let Some(bundles) = state.bundles() else {
        return not_loaded();
    };
    match tokio::task::spawn_blocking(move || bundles.predict(&req)).await {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(fields)) => invalid(fields),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), Vec::new()),
    }
}

async fn list_materials() -> Response {
    Json(materials()).into_response()
}

async fn health(State(state): State<AppState>) -> Response {
    Json(state.health()).into_response()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/generate", post(generate))
        .route("/api/predict", post(predict))
        .route("/api/materials", get(list_materials))
        .route("/api/health", get(health))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Binds `port` and serves until interrupted. Bundles load in the
/// background; until then `/api/health` reports `loading`.
pub async fn serve(port: u16, bundles_dir: PathBuf) -> Result<()> {
    let state = AppState::loading();
    let loader = state.clone();
    tokio::task::spawn_blocking(move || match Bundles::load(&bundles_dir) {
        Ok(b) => {
            log::info!("bundles loaded from {}", bundles_dir.display());
            loader.install(b);
        }
        Err(e) => {
            log::error!("loading bundles from {}: {e}", bundles_dir.display());
            loader.fail(e.to_string());
        }
    });
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(format!("0.0.0.0:{port}"), e))?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(format!("0.0.0.0:{port}"), e))
}
