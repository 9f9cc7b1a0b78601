//! Stub product web apps served in-process over loopback.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::time::Duration;

use axum::body::Body;
use axum::extract::{Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::Response;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::routing::{cookie_value, TOKEN_COOKIE};

pub const STUB_NAME_HEADER: &str = "x-stub-name";
pub const STUB_PATH_HEADER: &str = "x-stub-path";
pub const STUB_USER_HEADER: &str = "x-stub-verified-user";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    /// Body is a JSON object of the received headers (lowercase names).
    #[default]
    EchoHeaders,
    FixedBody {
        #[serde(default = "ok_status")]
        status: u16,
        body: String,
    },
    /// Sleeps, then echoes.
    Delay(u64),
    Fail(u16),
}

fn ok_status() -> u16 {
    200
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubBehavior {
    pub name: String,
    /// Verify the caller's token against the platform before answering.
    #[serde(default)]
    pub auth_check: bool,
    #[serde(default)]
    pub response_mode: ResponseMode,
}

impl StubBehavior {
    pub fn echo(name: &str) -> Self {
        StubBehavior {
            name: name.into(),
            auth_check: false,
            response_mode: ResponseMode::EchoHeaders,
        }
    }
}

#[derive(Clone)]
struct StubState {
    behavior: StubBehavior,
    verify_url: Option<String>,
    http: reqwest::Client,
}

/// A live stub. Dropping it stops the server.
#[derive(Debug)]
pub struct StubServer {
    pub name: String,
    pub addr: SocketAddr,
    _stop: oneshot::Sender<()>,
}

impl StubServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

/// Starts a stub on an ephemeral loopback port. `platform_url` is where
/// `auth_check` stubs send `POST /auth/verify`.
pub async fn spawn_stub(
    behavior: StubBehavior,
    platform_url: Option<&str>,
) -> std::io::Result<StubServer> {
    if behavior.auth_check && platform_url.is_none() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "auth_check stub needs a platform URL",
        ));
    }
    let listener = TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let state = StubState {
        verify_url: platform_url.map(|u| format!("{}/auth/verify", u.trim_end_matches('/'))),
        behavior: behavior.clone(),
        http: reqwest::Client::new(),
    };
    let app = axum::Router::new().fallback(serve).with_state(state);
    let (stop, stopped) = oneshot::channel::<()>();
    tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = stopped.await;
            })
            .await;
    });
    Ok(StubServer {
        name: behavior.name,
        addr,
        _stop: stop,
    })
}

fn caller_token(headers: &HeaderMap) -> Option<String> {
    let bearer = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_string());
    bearer.or_else(|| cookie_value(headers, TOKEN_COOKIE))
}

fn unauthorized(name: &str) -> Response {
    let mut resp = Response::new(Body::from(
        json!({ "error": "unauthorized", "source": "stub" }).to_string(),
    ));
    *resp.status_mut() = StatusCode::UNAUTHORIZED;
    resp.headers_mut().insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static("application/json"),
    );
    if let Ok(v) = HeaderValue::from_str(name) {
        resp.headers_mut().insert(STUB_NAME_HEADER, v);
    }
    resp
}

/// Asks the platform who the caller is. `None` means 401.
async fn verify_caller(state: &StubState, headers: &HeaderMap) -> Option<String> {
    let token = caller_token(headers)?;
    let url = state.verify_url.as_deref()?;
    let resp = state.http.post(url).bearer_auth(token).send().await.ok()?;
    if !resp.status().is_success() {
        return None;
    }
    let identity: serde_json::Value = resp.json().await.ok()?;
    identity["user_id"].as_str().map(str::to_string)
}

pub fn echo_body(headers: &HeaderMap) -> serde_json::Value {
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for (name, value) in headers {
        let value = String::from_utf8_lossy(value.as_bytes()).into_owned();
        map.entry(name.as_str().to_string())
            .and_modify(|v| {
                v.push_str(", ");
                v.push_str(&value);
            })
            .or_insert(value);
    }
    json!(map)
}

async fn serve(State(state): State<StubState>, req: Request) -> Response {
    let verified = if state.behavior.auth_check {
        match verify_caller(&state, req.headers()).await {
            Some(user) => Some(user),
            None => return unauthorized(&state.behavior.name),
        }
    } else {
        None
    };

    let (status, body) = match &state.behavior.response_mode {
        ResponseMode::EchoHeaders => (StatusCode::OK, echo_body(req.headers()).to_string()),
        ResponseMode::Delay(ms) => {
            tokio::time::sleep(Duration::from_millis(*ms)).await;
            (StatusCode::OK, echo_body(req.headers()).to_string())
        }
        ResponseMode::FixedBody { status, body } => (
            StatusCode::from_u16(*status).unwrap_or(StatusCode::OK),
            body.clone(),
        ),
        ResponseMode::Fail(status) => (
            StatusCode::from_u16(*status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            json!({ "error": "stub_failure", "source": "stub" }).to_string(),
        ),
    };

    let mut resp = Response::new(Body::from(body));
    *resp.status_mut() = status;
    let h = resp.headers_mut();
    h.insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static("application/json"),
    );
    if let Ok(v) = HeaderValue::from_str(&state.behavior.name) {
        h.insert(STUB_NAME_HEADER, v);
    }
    let path = req
        .uri()
        .path_and_query()
        .map(|p| p.as_str())
        .unwrap_or("/");
    if let Ok(v) = HeaderValue::from_str(path) {
        h.insert(STUB_PATH_HEADER, v);
    }
    if let Some(user) = verified.and_then(|u| HeaderValue::from_str(&u).ok()) {
        h.insert(STUB_USER_HEADER, user);
    }
    resp
}
