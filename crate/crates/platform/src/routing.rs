//! Request routing decisions. Everything here is a pure function of the route
//! table, the policy, the token signer and the supplied clock value, so it can
//! be tested without sockets.

use axum::http::header::{self, HeaderMap, HeaderName, HeaderValue};
use platform_core::rbac::Policy;
use platform_core::{Decision, Identity, RouteEntry, RouteTable, TokenSigner, Visibility};
use serde::{Deserialize, Serialize};

pub const TOKEN_COOKIE: &str = "platform_token";
pub const USER_HEADER: &str = "x-platform-user-id";
pub const ORG_HEADER: &str = "x-platform-org";
pub const ROLES_HEADER: &str = "x-platform-roles";
pub const IDENTITY_HEADERS: [&str; 3] = [USER_HEADER, ORG_HEADER, ROLES_HEADER];
pub const RESERVED_HEADER_PREFIX: &str = "x-platform-";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ListenerKind {
    Public,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RouteDecision<'a> {
    Proxy(&'a RouteEntry),
    NotFound,
    /// An internal route requested through the public listener.
    Hidden,
}

pub fn resolve<'a>(path: &str, listener: ListenerKind, table: &'a RouteTable) -> RouteDecision<'a> {
    match table.lookup(path) {
        None => RouteDecision::NotFound,
        Some(entry)
            if entry.visibility == Visibility::Internal && listener == ListenerKind::Public =>
        {
            RouteDecision::Hidden
        }
        Some(entry) => RouteDecision::Proxy(entry),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuthzOutcome {
    Allowed(Option<Identity>),
    NeedsLogin,
    Forbidden(Decision),
}

/// Gateway-mode authorization for a resolved route.
pub fn authorize(
    route: &RouteEntry,
    token: Option<&str>,
    now: u64,
    signer: &TokenSigner,
    policy: &Policy,
) -> AuthzOutcome {
    let identity = token.and_then(|t| signer.verify(t, now).ok());
    let Some(required) = &route.required_permission else {
        return AuthzOutcome::Allowed(identity);
    };
    let Some(identity) = identity else {
        return AuthzOutcome::NeedsLogin;
    };
    // Live policy, not the roles frozen into the token.
    let decision = policy.check(identity.user_id.as_str(), required.as_str());
    if decision.allowed {
        AuthzOutcome::Allowed(Some(identity))
    } else {
        AuthzOutcome::Forbidden(decision)
    }
}

/// Bearer token from `Authorization`, else the platform cookie.
pub fn extract_token(headers: &HeaderMap) -> Option<String> {
    if let Some(v) = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
    {
        if let Some(t) = v
            .strip_prefix("Bearer ")
            .or_else(|| v.strip_prefix("bearer "))
        {
            let t = t.trim();
            if !t.is_empty() {
                return Some(t.to_string());
            }
        }
    }
    cookie_value(headers, TOKEN_COOKIE)
}

pub fn cookie_value(headers: &HeaderMap, name: &str) -> Option<String> {
    headers
        .get_all(header::COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .filter_map(|pair| pair.trim().split_once('='))
        .find(|(k, _)| *k == name)
        .map(|(_, v)| v.to_string())
}

const HOP_BY_HOP: [&str; 7] = [
    "connection",
    "keep-alive",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
    // not in RFC 9110's list but widely treated as per-connection
    "proxy-connection",
];

/// Removes hop-by-hop headers, including any named by `Connection` and all `Proxy-*`.
pub fn strip_hop_by_hop(headers: &mut HeaderMap) {
    let named: Vec<HeaderName> = headers
        .get_all(header::CONNECTION)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .filter_map(|n| HeaderName::from_bytes(n.trim().as_bytes()).ok())
        .collect();
    for name in named {
        headers.remove(name);
    }
    for name in HOP_BY_HOP {
        headers.remove(name);
    }
    let proxy: Vec<HeaderName> = headers
        .keys()
        .filter(|k| k.as_str().starts_with("proxy-"))
        .cloned()
        .collect();
    for name in proxy {
        headers.remove(name);
    }
}

fn remove_cookie(headers: &mut HeaderMap, name: &str) {
    let kept: Vec<String> = headers
        .get_all(header::COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .map(str::trim)
        .filter(|pair| !pair.is_empty() && pair.split_once('=').map(|(k, _)| k) != Some(name))
        .map(str::to_string)
        .collect();
    headers.remove(header::COOKIE);
    if !kept.is_empty() {
        if let Ok(v) = HeaderValue::from_str(&kept.join("; ")) {
            headers.insert(header::COOKIE, v);
        }
    }
}

/// Per-request facts needed to rewrite headers for the upstream.
#[derive(Debug, Clone)]
pub struct ForwardContext<'a> {
    pub client_ip: String,
    pub identity: Option<&'a Identity>,
    /// Gateway mode: the platform consumed the credentials, so they are removed.
    pub consume_credentials: bool,
}

/// Rewrites client request headers into upstream request headers.
pub fn upstream_request_headers(inbound: &HeaderMap, ctx: &ForwardContext<'_>) -> HeaderMap {
    let mut headers = inbound.clone();
    let original_host = headers.get(header::HOST).cloned();
    strip_hop_by_hop(&mut headers);
    // The whole x-platform-* namespace belongs to the gateway.
    let reserved: Vec<HeaderName> = headers
        .keys()
        .filter(|k| k.as_str().starts_with(RESERVED_HEADER_PREFIX))
        .cloned()
        .collect();
    for h in reserved {
        headers.remove(h);
    }
    headers.remove(header::HOST);
    if ctx.consume_credentials {
        headers.remove(header::AUTHORIZATION);
        remove_cookie(&mut headers, TOKEN_COOKIE);
    }
    if let Some(id) = ctx.identity {
        if let Ok(v) = HeaderValue::from_str(id.user_id.as_str()) {
            headers.insert(USER_HEADER, v);
        }
        if let Some(org) = &id.organisation {
            if let Ok(v) = HeaderValue::from_str(org.as_str()) {
                headers.insert(ORG_HEADER, v);
            }
        }
        let mut roles: Vec<&str> = id.roles.iter().map(|r| r.as_str()).collect();
        roles.sort_unstable();
        if let Ok(v) = HeaderValue::from_str(&roles.join(",")) {
            headers.insert(ROLES_HEADER, v);
        }
    }
    let forwarded_for = match headers
        .get("x-forwarded-for")
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
    {
        Some(prior) => format!("{prior}, {}", ctx.client_ip),
        None => ctx.client_ip.clone(),
    };
    if let Ok(v) = HeaderValue::from_str(&forwarded_for) {
        headers.insert("x-forwarded-for", v);
    }
    headers.insert("x-forwarded-proto", HeaderValue::from_static("http"));
    match original_host {
        Some(host) => {
            headers.insert("x-forwarded-host", host);
        }
        None => {
            headers.remove("x-forwarded-host");
        }
    }
    headers
}

/// Upstream response headers to relay to the client.
pub fn downstream_response_headers(upstream: &HeaderMap) -> HeaderMap {
    let mut headers = upstream.clone();
    strip_hop_by_hop(&mut headers);
    headers
}

/// Joins the route's upstream base with the (optionally prefix-stripped) request path.
pub fn upstream_target(route: &RouteEntry, raw_path: &str, query: Option<&str>) -> String {
    let base = route.upstream_url.trim_end_matches('/');
    let path = if route.strip_prefix && route.path_prefix != "/" {
        match raw_path.strip_prefix(route.path_prefix.as_str()) {
            Some("") => "/",
            Some(rest) => rest,
            None => raw_path,
        }
    } else {
        raw_path
    };
    match query {
        Some(q) => format!("{base}{path}?{q}"),
        None => format!("{base}{path}"),
    }
}

/// Local absolute path safe to use as a redirect target.
pub fn is_local_redirect(target: &str) -> bool {
    target.starts_with('/')
        && !target.starts_with("//")
        && !target.contains('\\')
        && !target.chars().any(|c| c.is_control() || c.is_whitespace())
}
