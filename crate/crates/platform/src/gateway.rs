//! The routing service: per-listener request handling and upstream forwarding.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::extract::{ConnectInfo, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use futures_util::TryStreamExt;
use parking_lot::RwLock;
use percent_encoding::percent_decode_str;
use platform_core::{AuthMode, Clock, Identity, PlatformConfig, RouteEntry, Snapshot, TokenSigner};
use serde_json::json;

use crate::routing::{
    authorize, downstream_response_headers, extract_token, resolve, upstream_request_headers,
    upstream_target, AuthzOutcome, ForwardContext, ListenerKind, RouteDecision,
};
use crate::{admin, auth_http};

pub(crate) fn error_response(
    status: StatusCode,
    code: &str,
    reason: impl Into<String>,
) -> Response {
    let body = json!({ "error": code, "reason": reason.into() });
    json_response(status, &body)
}

pub(crate) fn json_response(status: StatusCode, body: &serde_json::Value) -> Response {
    let mut resp = Response::new(Body::from(body.to_string()));
    *resp.status_mut() = status;
    resp.headers_mut().insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static("application/json"),
    );
    resp
}

/// The one 404 used for unknown paths, hidden internal routes and admin probes
/// on the public listener. Its bytes never depend on the request.
pub fn not_found() -> Response {
    error_response(
        StatusCode::NOT_FOUND,
        "not_found",
        "no route matches this path",
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("snapshot version {offered} is older than applied version {applied}")]
pub struct StaleVersion {
    pub offered: u64,
    pub applied: u64,
}

/// Shared state behind both listeners.
#[derive(Debug)]
pub struct Gateway {
    pub(crate) config: PlatformConfig,
    pub(crate) store: Arc<platform_core::Store>,
    pub(crate) signer: TokenSigner,
    pub(crate) clock: Arc<dyn Clock>,
    current: RwLock<Arc<Snapshot>>,
    client: reqwest::Client,
    pub(crate) started: Instant,
}

impl Gateway {
    pub fn new(
        config: PlatformConfig,
        store: Arc<platform_core::Store>,
        clock: Arc<dyn Clock>,
    ) -> anyhow::Result<Arc<Self>> {
        let signer = TokenSigner::new(&config.token_secret)?;
        let client = reqwest::Client::builder()
            .connect_timeout(Duration::from_secs(config.upstream_connect_timeout_seconds))
            .redirect(reqwest::redirect::Policy::none())
            .build()?;
        let gateway = Arc::new(Gateway {
            current: RwLock::new(store.snapshot()),
            config,
            store: store.clone(),
            signer,
            clock,
            client,
            started: Instant::now(),
        });
        let weak = Arc::downgrade(&gateway);
        store.on_commit(move |snap| {
            if let Some(gw) = weak.upgrade() {
                if let Err(stale) = gw.apply_snapshot(snap.clone()) {
                    tracing::warn!(%stale, "ignoring stale snapshot");
                }
            }
        });
        // A commit may have landed between reading the snapshot and registering.
        let _ = gateway.apply_snapshot(store.snapshot());
        Ok(gateway)
    }

    /// Swaps in a newer snapshot. Requests already running keep the one they loaded.
    pub fn apply_snapshot(&self, snapshot: Arc<Snapshot>) -> Result<(), StaleVersion> {
        let mut current = self.current.write();
        if snapshot.version < current.version {
            return Err(StaleVersion {
                offered: snapshot.version,
                applied: current.version,
            });
        }
        *current = snapshot;
        Ok(())
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().clone()
    }

    pub fn applied_version(&self) -> u64 {
        self.current.read().version
    }

    pub fn signer(&self) -> &TokenSigner {
        &self.signer
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    /// Entry point for every request on either listener.
    pub async fn handle_request(
        self: &Arc<Self>,
        listener: ListenerKind,
        client: SocketAddr,
        req: Request,
    ) -> Response {
        let raw_path = req.uri().path().to_string();
        let Some(path) = normalized_path(&raw_path) else {
            return error_response(
                StatusCode::BAD_REQUEST,
                "bad_request",
                "malformed request path",
            );
        };
        if is_under(&path, "/auth") {
            return auth_http::handle(self, req).await;
        }
        if is_under(&path, "/admin") {
            return match listener {
                ListenerKind::Internal => admin::handle(self, req).await,
                ListenerKind::Public => not_found(),
            };
        }

        let snapshot = self.snapshot();
        let route = match resolve(&path, listener, &snapshot.routes) {
            RouteDecision::NotFound | RouteDecision::Hidden => return not_found(),
            RouteDecision::Proxy(route) => route.clone(),
        };

        let identity = match route.auth_mode {
            AuthMode::Passthrough => None,
            AuthMode::Gateway => {
                let token = extract_token(req.headers());
                match authorize(
                    &route,
                    token.as_deref(),
                    self.now(),
                    &self.signer,
                    &snapshot.policy,
                ) {
                    AuthzOutcome::Allowed(identity) => identity,
                    AuthzOutcome::NeedsLogin => return needs_login(&req),
                    AuthzOutcome::Forbidden(decision) => {
                        return json_response(
                            StatusCode::FORBIDDEN,
                            &json!({
                                "error": "forbidden",
                                "reason": decision.explanation(),
                                "decision": decision,
                            }),
                        )
                    }
                }
            }
        };
        drop(snapshot);
        self.forward(req, &route, identity.as_ref(), client).await
    }

    /// Proxies `req` to the route's upstream and relays the response.
    pub async fn forward(
        &self,
        req: Request,
        route: &RouteEntry,
        identity: Option<&Identity>,
        client: SocketAddr,
    ) -> Response {
        let (parts, body) = req.into_parts();
        let target = upstream_target(route, parts.uri.path(), parts.uri.query());
        let headers = upstream_request_headers(
            &parts.headers,
            &ForwardContext {
                client_ip: client.ip().to_string(),
                identity,
                consume_credentials: route.auth_mode == AuthMode::Gateway,
            },
        );
        let upstream_req = self
            .client
            .request(parts.method, &target)
            .headers(headers)
            .body(reqwest::Body::wrap_stream(body.into_data_stream()));
        let timeout = Duration::from_secs(self.config.upstream_timeout_seconds);
        let resp = match tokio::time::timeout(timeout, upstream_req.send()).await {
            Err(_) => {
                return error_response(
                    StatusCode::GATEWAY_TIMEOUT,
                    "upstream_timeout",
                    format!("upstream did not respond within {}s", timeout.as_secs()),
                )
            }
            Ok(Err(e)) => {
                tracing::warn!(upstream = %route.upstream_url, error = %e, "upstream request failed");
                let status = if e.is_timeout() && !e.is_connect() {
                    StatusCode::GATEWAY_TIMEOUT
                } else {
                    StatusCode::BAD_GATEWAY
                };
                let code = if status == StatusCode::GATEWAY_TIMEOUT {
                    "upstream_timeout"
                } else {
                    "upstream_unreachable"
                };
                return error_response(status, code, "upstream could not be reached");
            }
            Ok(Ok(resp)) => resp,
        };
        let mut out = Response::new(Body::empty());
        *out.status_mut() = resp.status();
        *out.headers_mut() = downstream_response_headers(resp.headers());
        *out.body_mut() = Body::from_stream(resp.bytes_stream().map_err(std::io::Error::other));
        out
    }
}

fn is_under(path: &str, prefix: &str) -> bool {
    path == prefix
        || path
            .strip_prefix(prefix)
            .is_some_and(|r| r.starts_with('/'))
}

/// Percent-decoded path used for matching. `None` for paths that are not
/// valid UTF-8 once decoded or that carry dot segments.
pub fn normalized_path(raw: &str) -> Option<String> {
    if !raw.starts_with('/') {
        return None;
    }
    let decoded = percent_decode_str(raw).decode_utf8().ok()?;
    if decoded.split('/').any(|seg| seg == "." || seg == "..") {
        return None;
    }
    if decoded.chars().any(|c| c.is_control()) {
        return None;
    }
    Some(decoded.into_owned())
}

fn needs_login(req: &Request) -> Response {
    let wants_html = req
        .headers()
        .get_all(header::ACCEPT)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .any(|v| v.contains("text/html"));
    if !wants_html {
        return error_response(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "a valid platform token is required",
        );
    }
    let original = req
        .uri()
        .path_and_query()
        .map(|pq| pq.as_str())
        .unwrap_or("/");
    let encoded: String = form_urlencoded::byte_serialize(original.as_bytes()).collect();
    let location = format!("/auth/login?redirect={encoded}");
    let mut resp = Response::new(Body::empty());
    *resp.status_mut() = StatusCode::FOUND;
    if let Ok(v) = HeaderValue::from_str(&location) {
        resp.headers_mut().insert(header::LOCATION, v);
    }
    resp
}

#[derive(Clone)]
pub(crate) struct ListenerState {
    pub gateway: Arc<Gateway>,
    pub kind: ListenerKind,
}

pub(crate) async fn listener_handler(
    State(state): State<ListenerState>,
    ConnectInfo(client): ConnectInfo<SocketAddr>,
    req: Request,
) -> impl IntoResponse {
    state.gateway.handle_request(state.kind, client, req).await
}

pub(crate) fn router(gateway: Arc<Gateway>, kind: ListenerKind) -> axum::Router {
    axum::Router::new()
        .fallback(listener_handler)
        .with_state(ListenerState { gateway, kind })
}

// Compile-time check: axum requires the request future to be Send.
fn _assert_send(gw: Arc<Gateway>, req: Request, addr: SocketAddr) {
    fn is_send<T: Send>(_: T) {}
    is_send(async move { gw.handle_request(ListenerKind::Public, addr, req).await });
}
