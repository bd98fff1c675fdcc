//! A local chat-completions endpoint for tests and demos.
//!
//! In [`MockMode::Latent`] it reads the planted coordinates that
//! [`synthetic_descriptions`](super::synthetic_descriptions) writes into each case
//! and answers with whichever reference is nearer the anchor (ties answer `k`).

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;

use super::prompt::{parse_profile, prompt_cases};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockMode {
    Latent,
    /// Always replies with text that names neither reference.
    Garbage,
    /// Rejects every request with this HTTP status.
    Reject(u16),
}

#[derive(Clone)]
struct MockState {
    mode: MockMode,
    requests: Arc<AtomicUsize>,
}

pub struct MockServer {
    addr: SocketAddr,
    requests: Arc<AtomicUsize>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds an ephemeral localhost port and serves on a background thread until dropped.
    pub fn start(mode: MockMode) -> Result<Self> {
        Self::start_on("127.0.0.1:0", mode)
    }

    pub fn start_on(bind: &str, mode: MockMode) -> Result<Self> {
        let listener = std::net::TcpListener::bind(bind)
            .map_err(|e| Error::Remote(format!("mock oracle cannot bind {bind}: {e}")))?;
        listener
            .set_nonblocking(true)
            .map_err(|e| Error::Remote(format!("mock oracle socket setup: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Error::Remote(format!("mock oracle socket setup: {e}")))?;
        let requests = Arc::new(AtomicUsize::new(0));
        let state = MockState {
            mode,
            requests: requests.clone(),
        };
        let (tx, rx) = oneshot::channel();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .expect("mock oracle runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("mock oracle listener");
                let app = Router::new()
                    .route("/v1/chat/completions", post(complete))
                    .with_state(state);
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(MockServer {
            addr,
            requests,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    /// Requests received so far.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Blocks until the server thread exits (never, unless the server fails).
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// The answer a latent-reading model gives for one user message.
pub fn latent_answer(user: &str) -> Option<&'static str> {
    let cases = prompt_cases(user)?;
    let [a, j, k] = cases.map(parse_profile);
    let (a, j, k) = (a?, j?, k?);
    if a.len() != j.len() || a.len() != k.len() {
        return None;
    }
    let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    Some(if dist(&a, &j) < dist(&a, &k) { "j" } else { "k" })
}

async fn complete(State(state): State<MockState>, Json(body): Json<Value>) -> Response {
    state.requests.fetch_add(1, Ordering::SeqCst);
    let content = match state.mode {
        MockMode::Reject(code) => {
            let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            return (status, Json(json!({"error": {"message": "rejected by mock"}}))).into_response();
        }
        MockMode::Garbage => "Both are similar in some ways.",
        MockMode::Latent => {
            let user = body["messages"]
                .as_array()
                .and_then(|m| m.iter().rev().find(|m| m["role"] == "user"))
                .and_then(|m| m["content"].as_str())
                .unwrap_or_default();
            latent_answer(user).unwrap_or("I cannot tell.")
        }
    };
    Json(json!({
        "id": "mock-completion",
        "object": "chat.completion",
        "model": body["model"],
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop",
        }],
    }))
    .into_response()
}
