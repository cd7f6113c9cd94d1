//! Pull-based JSON API over a [`FeedbackHub`]:
//!
//! - `GET /api/pair` — oldest pending pair, or `{"empty":true}`
//! - `POST /api/label` — `{"pair_id":..,"label":"A"|"B"|"skip"}`
//! - `GET /api/status` — session progress
//!
//! Clients identify themselves with the `X-Client-Id` header; the first
//! client to submit a label owns the session.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use rebel_core::feedback::{FeedbackHub, Rejection};
use rebel_core::teacher::Label;

pub const CLIENT_HEADER: &str = "x-client-id";
const ANONYMOUS: &str = "anonymous";

#[derive(Debug, Deserialize)]
struct LabelRequest {
    pair_id: String,
    label: String,
}

fn parse_label(s: &str) -> Option<Label> {
    match s {
        "A" => Some(Label::PreferA),
        "B" => Some(Label::PreferB),
        "skip" => Some(Label::Skip),
        _ => None,
    }
}

fn reject(status: StatusCode, reason: &str) -> Response {
    (status, Json(json!({ "ok": false, "reason": reason }))).into_response()
}

async fn get_pair(State(hub): State<Arc<FeedbackHub>>) -> Response {
    match hub.current() {
        Some(p) => Json(p).into_response(),
        None => Json(json!({ "empty": true })).into_response(),
    }
}

async fn get_status(State(hub): State<Arc<FeedbackHub>>) -> Response {
    Json(hub.status()).into_response()
}

async fn post_label(State(hub): State<Arc<FeedbackHub>>, headers: HeaderMap, body: Bytes) -> Response {
    let Ok(req) = serde_json::from_slice::<LabelRequest>(&body) else {
        return reject(StatusCode::BAD_REQUEST, "malformed request body");
    };
    let Some(label) = parse_label(&req.label) else {
        return reject(StatusCode::BAD_REQUEST, "label must be \"A\", \"B\" or \"skip\"");
    };
    let client = headers
        .get(CLIENT_HEADER)
        .and_then(|v| v.to_str().ok())
        .unwrap_or(ANONYMOUS);
    match hub.submit(&req.pair_id, label, client) {
        Ok(()) => Json(json!({ "ok": true })).into_response(),
        Err(r) => {
            let status = match r {
                Rejection::UnknownPair => StatusCode::NOT_FOUND,
                Rejection::AlreadyLabeled | Rejection::OtherClient => StatusCode::CONFLICT,
            };
            reject(status, r.reason())
        }
    }
}

pub fn router(hub: Arc<FeedbackHub>) -> Router {
    Router::new()
        .route("/api/pair", get(get_pair))
        .route("/api/label", post(post_label))
        .route("/api/status", get(get_status))
        .with_state(hub)
}

/// A server running on its own thread.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServiceHandle {
    pub fn stop(mut self) -> std::io::Result<()> {
        self.shutdown_and_join()
    }

    fn shutdown_and_join(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("service thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        let _ = self.shutdown_and_join();
    }
}

/// Binds `host:port` (port 0 picks a free one) and serves until stopped.
pub fn spawn(host: &str, port: u16, hub: Arc<FeedbackHub>) -> std::io::Result<ServiceHandle> {
    let listener = std::net::TcpListener::bind((host, port))?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_io().build()?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            axum::serve(listener, router(hub))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })
    });
    Ok(ServiceHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_the_three_wire_labels_parse() {
        assert_eq!(parse_label("A"), Some(Label::PreferA));
        assert_eq!(parse_label("B"), Some(Label::PreferB));
        assert_eq!(parse_label("skip"), Some(Label::Skip));
        for bad in ["a", "Skip", "", "AB"] {
            assert_eq!(parse_label(bad), None);
        }
    }

    #[test]
    fn stopping_releases_the_port() {
        let hub = Arc::new(FeedbackHub::new());
        let server = spawn("127.0.0.1", 0, Arc::clone(&hub)).unwrap();
        let addr = server.addr;
        server.stop().unwrap();
        assert!(std::net::TcpListener::bind(addr).is_ok());
    }
}
