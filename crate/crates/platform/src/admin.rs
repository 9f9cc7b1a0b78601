//! `/admin/*` REST surface, mounted only on the internal listener.
//!
//! Collections: routes, permissions, roles, organisations, users, credentials.
//! `GET /admin/<c>` lists, `GET|PUT|DELETE /admin/<c>/<id>` fetch, upsert and
//! remove. Route ids are the path prefix, URL-encoded (the leading `/` may be
//! omitted). Mutations answer `{"version": N}` with the new state version.

use std::sync::Arc;

use axum::body::Body;
use axum::extract::Request;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::Response;
use percent_encoding::percent_decode_str;
use platform_core::rbac::{Entity, EntityKind, Organisation, Permission, Role, User};
use platform_core::{RbacError, RouteEntry, RouteError, StoreError, UserId};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::gateway::{error_response, json_response, Gateway};
use crate::routing::extract_token;

pub const ADMIN_PERMISSION: &str = "platform.admin";
const MAX_BODY_BYTES: usize = 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Collection {
    Routes,
    Permissions,
    Roles,
    Organisations,
    Users,
    Credentials,
}

impl Collection {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "routes" => Collection::Routes,
            "permissions" => Collection::Permissions,
            "roles" => Collection::Roles,
            "organisations" => Collection::Organisations,
            "users" => Collection::Users,
            "credentials" => Collection::Credentials,
            _ => return None,
        })
    }

    fn entity_kind(self) -> Option<EntityKind> {
        Some(match self {
            Collection::Permissions => EntityKind::Permission,
            Collection::Roles => EntityKind::Role,
            Collection::Organisations => EntityKind::Organisation,
            Collection::Users => EntityKind::User,
            Collection::Routes | Collection::Credentials => return None,
        })
    }
}

fn not_found(what: impl Into<String>) -> Response {
    error_response(StatusCode::NOT_FOUND, "not_found", what)
}

fn unprocessable(reason: impl Into<String>) -> Response {
    error_response(
        StatusCode::UNPROCESSABLE_ENTITY,
        "validation_failed",
        reason,
    )
}

fn method_not_allowed() -> Response {
    error_response(
        StatusCode::METHOD_NOT_ALLOWED,
        "method_not_allowed",
        "method not allowed",
    )
}

fn version_ack(version: u64) -> Response {
    json_response(StatusCode::OK, &json!({ "version": version }))
}

fn store_error(err: StoreError) -> Response {
    match err {
        StoreError::Route(RouteError::NotFound(p)) => not_found(format!("no route {p:?}")),
        StoreError::Route(e) => unprocessable(e.to_string()),
        StoreError::Rbac(
            e @ (RbacError::DanglingReference { .. } | RbacError::StillReferenced { .. }),
        ) => {
            let code = match e {
                RbacError::DanglingReference { .. } => "dangling_reference",
                _ => "still_referenced",
            };
            error_response(StatusCode::CONFLICT, code, e.to_string())
        }
        StoreError::Rbac(e @ RbacError::NotFound { .. }) => not_found(e.to_string()),
        StoreError::Rbac(e) => unprocessable(e.to_string()),
        StoreError::Auth(e) => unprocessable(e.to_string()),
        StoreError::CredentialNotFound(u) => not_found(format!("no credentials for {u:?}")),
        e @ StoreError::UndefinedRoutePermission { .. } => {
            error_response(StatusCode::CONFLICT, "dangling_reference", e.to_string())
        }
        e @ StoreError::PermissionRequiredByRoute { .. } => {
            error_response(StatusCode::CONFLICT, "still_referenced", e.to_string())
        }
        StoreError::Persist(e) => {
            tracing::error!(error = %e, "state persistence failed");
            error_response(
                StatusCode::INTERNAL_SERVER_ERROR,
                "persistence_failed",
                "state could not be saved",
            )
        }
    }
}

pub(crate) async fn handle(gateway: &Arc<Gateway>, req: Request) -> Response {
    let path = req.uri().path().to_string();
    let rest = path.strip_prefix("/admin").unwrap_or("");
    let rest = rest.strip_prefix('/').unwrap_or(rest);

    if rest == "health" {
        return if req.method() == Method::GET {
            health(gateway)
        } else {
            method_not_allowed()
        };
    }
    if rest == "ui" || rest.starts_with("ui/") {
        return serve_ui(gateway, rest.strip_prefix("ui").unwrap_or("")).await;
    }

    // Everything else needs an identity holding platform.admin.
    let Some(token) = extract_token(req.headers()) else {
        return error_response(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "a valid platform token is required",
        );
    };
    let identity = match gateway.signer().verify(&token, gateway.now()) {
        Ok(id) => id,
        Err(e) => return error_response(StatusCode::UNAUTHORIZED, "unauthorized", e.code()),
    };
    let decision = gateway
        .snapshot()
        .policy
        .check(identity.user_id.as_str(), ADMIN_PERMISSION);
    if !decision.allowed {
        return json_response(
            StatusCode::FORBIDDEN,
            &json!({ "error": "forbidden", "reason": decision.explanation(), "decision": decision }),
        );
    }

    let (collection_name, id) = match rest.split_once('/') {
        Some((c, id)) => (c, Some(id)),
        None => (rest, None),
    };
    match (collection_name, req.method().clone(), id) {
        ("check", Method::GET, None) => return check(gateway, &req),
        ("tokens", Method::POST, None) => return issue_token(gateway, req).await,
        ("check" | "tokens", _, _) => return method_not_allowed(),
        _ => {}
    }
    let Some(collection) = Collection::parse(collection_name) else {
        return not_found(format!("no admin resource {collection_name:?}"));
    };
    let id = match id.filter(|i| !i.is_empty()) {
        None => None,
        Some(raw) => match percent_decode_str(raw).decode_utf8() {
            Ok(s) => Some(s.into_owned()),
            Err(_) => return unprocessable("id is not valid UTF-8"),
        },
    };
    let method = req.method().clone();
    match (method, id) {
        (Method::GET, None) => list(gateway, collection),
        (Method::GET, Some(id)) => get(gateway, collection, &id),
        (Method::PUT, Some(id)) => {
            let body = match read_json(req).await {
                Ok(v) => v,
                Err(resp) => return resp,
            };
            put(gateway, collection, &id, body).await
        }
        (Method::DELETE, Some(id)) => delete(gateway, collection, &id),
        _ => method_not_allowed(),
    }
}

async fn read_json(req: Request) -> Result<Value, Response> {
    let bytes = axum::body::to_bytes(req.into_body(), MAX_BODY_BYTES)
        .await
        .map_err(|_| error_response(StatusCode::BAD_REQUEST, "bad_request", "unreadable body"))?;
    serde_json::from_slice(&bytes).map_err(|e| unprocessable(format!("invalid JSON: {e}")))
}

fn route_key(id: &str) -> String {
    if id.starts_with('/') {
        id.to_string()
    } else {
        format!("/{id}")
    }
}

fn health(gateway: &Gateway) -> Response {
    let snap = gateway.snapshot();
    json_response(
        StatusCode::OK,
        &json!({
            "state_version": snap.version,
            "routes_count": snap.routes.len(),
            "uptime_seconds": gateway.started.elapsed().as_secs(),
        }),
    )
}

fn credential_view(c: &platform_core::Credential) -> Value {
    json!({ "username": c.username, "user_id": c.user_id })
}

fn list(gateway: &Gateway, collection: Collection) -> Response {
    let snap = gateway.snapshot();
    let items: Vec<Value> = match collection {
        Collection::Routes => snap.routes.entries().map(|e| json!(e)).collect(),
        Collection::Permissions => snap.policy.permissions().map(|e| json!(e)).collect(),
        Collection::Roles => snap.policy.roles().map(|e| json!(e)).collect(),
        Collection::Organisations => snap.policy.organisations().map(|e| json!(e)).collect(),
        Collection::Users => snap.policy.users().map(|e| json!(e)).collect(),
        Collection::Credentials => snap.credentials.iter().map(credential_view).collect(),
    };
    json_response(
        StatusCode::OK,
        &json!({ "version": snap.version, "items": items }),
    )
}

fn get(gateway: &Gateway, collection: Collection, id: &str) -> Response {
    let snap = gateway.snapshot();
    let item = match collection {
        Collection::Routes => snap.routes.get(&route_key(id)).map(|e| json!(e)),
        Collection::Permissions => snap.policy.permission(id).map(|e| json!(e)),
        Collection::Roles => snap.policy.role(id).map(|e| json!(e)),
        Collection::Organisations => snap.policy.organisation(id).map(|e| json!(e)),
        Collection::Users => snap.policy.user(id).map(|e| json!(e)),
        Collection::Credentials => snap.credentials.get(id).map(credential_view),
    };
    match item {
        Some(v) => json_response(StatusCode::OK, &v),
        None => not_found(format!("no such item {id:?}")),
    }
}

/// Fills `key` from the URL id when absent; rejects a conflicting value.
#[allow(clippy::result_large_err)]
fn bind_id(body: &mut Value, key: &str, id: &str) -> Result<(), Response> {
    let Some(obj) = body.as_object_mut() else {
        return Err(unprocessable("body must be a JSON object"));
    };
    match obj.get(key) {
        None => {
            obj.insert(key.to_string(), Value::String(id.to_string()));
            Ok(())
        }
        Some(Value::String(s)) if s == id => Ok(()),
        Some(other) => Err(unprocessable(format!(
            "{key} {other} does not match the id in the URL ({id:?})"
        ))),
    }
}

#[allow(clippy::result_large_err)]
fn decode<T: serde::de::DeserializeOwned>(body: Value) -> Result<T, Response> {
    serde_json::from_value(body).map_err(|e| unprocessable(e.to_string()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CredentialInput {
    password: String,
    #[serde(default)]
    user_id: Option<UserId>,
}

async fn put(
    gateway: &Arc<Gateway>,
    collection: Collection,
    id: &str,
    mut body: Value,
) -> Response {
    let store = gateway.store.clone();
    let result = match collection {
        Collection::Routes => {
            let key = route_key(id);
            if let Err(r) = bind_id(&mut body, "path_prefix", &key) {
                return r;
            }
            if let Some(obj) = body.as_object_mut() {
                obj.entry("auth_mode")
                    .or_insert_with(|| json!(gateway.config.default_auth_mode));
            }
            let entry: RouteEntry = match decode(body) {
                Ok(e) => e,
                Err(r) => return r,
            };
            store.upsert_route(entry)
        }
        Collection::Credentials => {
            let input: CredentialInput = match decode(body) {
                Ok(c) => c,
                Err(r) => return r,
            };
            let username = id.to_string();
            let user_id = input.user_id.unwrap_or_else(|| UserId::from(id));
            tokio::task::spawn_blocking(move || {
                store.set_credentials(&username, &input.password, user_id)
            })
            .await
            .expect("credential task panicked")
        }
        _ => {
            if let Err(r) = bind_id(&mut body, "id", id) {
                return r;
            }
            let entity = match collection {
                Collection::Permissions => decode::<Permission>(body).map(Entity::from),
                Collection::Roles => decode::<Role>(body).map(Entity::from),
                Collection::Organisations => decode::<Organisation>(body).map(Entity::from),
                Collection::Users => decode::<User>(body).map(Entity::from),
                Collection::Routes | Collection::Credentials => unreachable!(),
            };
            match entity {
                Ok(entity) => store.define(entity),
                Err(r) => return r,
            }
        }
    };
    match result {
        Ok(v) => version_ack(v),
        Err(e) => store_error(e),
    }
}

fn delete(gateway: &Gateway, collection: Collection, id: &str) -> Response {
    let store = &gateway.store;
    let result = match collection {
        Collection::Routes => store.remove_route(&route_key(id)),
        Collection::Credentials => store.remove_credentials(id),
        other => store.remove_entity(other.entity_kind().expect("entity collection"), id),
    };
    match result {
        Ok(v) => version_ack(v),
        Err(e) => store_error(e),
    }
}

fn query_pairs(req: &Request) -> Vec<(String, String)> {
    req.uri()
        .query()
        .map(|q| form_urlencoded::parse(q.as_bytes()).into_owned().collect())
        .unwrap_or_default()
}

fn check(gateway: &Gateway, req: &Request) -> Response {
    let pairs = query_pairs(req);
    let find = |k: &str| {
        pairs
            .iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.clone())
    };
    let Some(user) = find("user") else {
        return unprocessable("missing query parameter: user");
    };
    let perm = match (find("perm"), find("route")) {
        (Some(p), _) => p,
        (None, Some(route)) => {
            let snap = gateway.snapshot();
            match snap.routes.lookup(&route_key(&route)) {
                None => return not_found(format!("no route matches {route:?}")),
                Some(entry) => match &entry.required_permission {
                    Some(p) => p.to_string(),
                    None => {
                        return json_response(
                            StatusCode::OK,
                            &json!({ "allowed": true, "reason": { "kind": "NoPermissionRequired" },
                                     "explanation": "allowed: the route requires no permission" }),
                        )
                    }
                },
            }
        }
        (None, None) => return unprocessable("missing query parameter: perm"),
    };
    if !platform_core::rbac::is_valid_token(&perm) {
        return unprocessable(format!("invalid permission id {perm:?}"));
    }
    let decision = gateway.snapshot().policy.check(&user, &perm);
    let mut body = json!(decision);
    body["explanation"] = json!(decision.explanation());
    json_response(StatusCode::OK, &body)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenRequest {
    user_id: String,
    #[serde(default)]
    ttl_seconds: Option<u64>,
}

async fn issue_token(gateway: &Gateway, req: Request) -> Response {
    let body = match read_json(req).await {
        Ok(v) => v,
        Err(r) => return r,
    };
    let input: TokenRequest = match decode(body) {
        Ok(t) => t,
        Err(r) => return r,
    };
    let ttl = input
        .ttl_seconds
        .unwrap_or(gateway.config.token_ttl_seconds);
    let snap = gateway.snapshot();
    match gateway
        .signer()
        .issue(&snap.policy, &input.user_id, ttl, gateway.now())
    {
        Ok(token) => json_response(
            StatusCode::OK,
            &json!({ "token": token, "expires_in": ttl }),
        ),
        Err(platform_core::AuthError::UnknownUser(u)) => not_found(format!("unknown user {u:?}")),
        Err(e) => unprocessable(e.to_string()),
    }
}

async fn serve_ui(gateway: &Gateway, rel: &str) -> Response {
    let Some(dir) = &gateway.config.ui_assets_dir else {
        return not_found("admin console assets are not installed");
    };
    let rel = rel.trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let Ok(rel) = percent_decode_str(rel).decode_utf8() else {
        return not_found("no such asset");
    };
    if rel
        .split('/')
        .any(|s| s.is_empty() || s == "." || s == ".." || s.contains('\\'))
    {
        return not_found("no such asset");
    }
    let path = dir.join(rel.as_ref());
    match tokio::fs::read(&path).await {
        Ok(bytes) => {
            let mut resp = Response::new(Body::from(bytes));
            resp.headers_mut().insert(
                header::CONTENT_TYPE,
                HeaderValue::from_static(content_type_for(&rel)),
            );
            resp
        }
        Err(_) => not_found("no such asset"),
    }
}

fn content_type_for(path: &str) -> &'static str {
    match path.rsplit('.').next().unwrap_or("") {
        "html" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "json" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "ico" => "image/x-icon",
        "woff2" => "font/woff2",
        _ => "application/octet-stream",
    }
}
