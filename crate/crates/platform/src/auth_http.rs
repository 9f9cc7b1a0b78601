//! `/auth/*` endpoints, served on both listeners.

use std::sync::Arc;

use axum::body::Body;
use axum::extract::Request;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::Response;
use serde_json::json;

use crate::gateway::{error_response, json_response, not_found, Gateway};
use crate::routing::{is_local_redirect, TOKEN_COOKIE};

const MAX_FORM_BYTES: usize = 16 * 1024;

const FALLBACK_LOGIN: &str = r#"<!doctype html>
<html>
<head><meta charset="utf-8"><title>Sign in</title></head>
<body>
<h1>Sign in</h1>
{{error}}<form method="post" action="/auth/login">
<input type="hidden" name="redirect" value="{{redirect}}">
<label>Username <input name="username" autocomplete="username"></label>
<label>Password <input name="password" type="password" autocomplete="current-password"></label>
<button type="submit">Sign in</button>
</form>
</body>
</html>
"#;

pub(crate) async fn handle(gateway: &Arc<Gateway>, req: Request) -> Response {
    let path = req.uri().path().to_string();
    match (req.method().clone(), path.as_str()) {
        (Method::GET, "/auth/login") => {
            login_page(gateway, query_param(&req, "redirect"), None).await
        }
        (Method::POST, "/auth/login") => login(gateway, req).await,
        (Method::POST, "/auth/verify") => verify(gateway, &req),
        (_, "/auth/login" | "/auth/verify") => error_response(
            StatusCode::METHOD_NOT_ALLOWED,
            "method_not_allowed",
            "method not allowed",
        ),
        _ => not_found(),
    }
}

fn query_param(req: &Request, name: &str) -> Option<String> {
    let query = req.uri().query()?;
    form_urlencoded::parse(query.as_bytes())
        .find(|(k, _)| k == name)
        .map(|(_, v)| v.into_owned())
}

fn html_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

async fn login_page(gateway: &Gateway, redirect: Option<String>, error: Option<&str>) -> Response {
    let redirect = redirect
        .filter(|r| is_local_redirect(r))
        .unwrap_or_else(|| "/".into());
    let page = match &gateway.config.ui_assets_dir {
        Some(dir) if error.is_none() => {
            tokio::fs::read_to_string(dir.join("login.html")).await.ok()
        }
        _ => None,
    };
    let page = page.unwrap_or_else(|| {
        let error = error
            .map(|e| format!("<p role=\"alert\">{}</p>\n", html_escape(e)))
            .unwrap_or_default();
        FALLBACK_LOGIN
            .replace("{{error}}", &error)
            .replace("{{redirect}}", &html_escape(&redirect))
    });
    let mut resp = Response::new(Body::from(page));
    resp.headers_mut().insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static("text/html; charset=utf-8"),
    );
    resp
}

#[derive(Debug, Default)]
struct LoginForm {
    username: String,
    password: String,
    redirect: Option<String>,
}

fn parse_login(content_type: &str, body: &[u8]) -> Option<LoginForm> {
    if content_type.starts_with("application/json") {
        let v: serde_json::Value = serde_json::from_slice(body).ok()?;
        return Some(LoginForm {
            username: v.get("username")?.as_str()?.to_string(),
            password: v.get("password")?.as_str()?.to_string(),
            redirect: v
                .get("redirect")
                .and_then(|r| r.as_str())
                .map(str::to_string),
        });
    }
    let mut form = LoginForm::default();
    for (k, v) in form_urlencoded::parse(body) {
        match k.as_ref() {
            "username" => form.username = v.into_owned(),
            "password" => form.password = v.into_owned(),
            "redirect" => form.redirect = Some(v.into_owned()),
            _ => {}
        }
    }
    Some(form)
}

async fn login(gateway: &Arc<Gateway>, req: Request) -> Response {
    let wants_html = req
        .headers()
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("text/html"));
    let content_type = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_ascii_lowercase();
    let query_redirect = query_param(&req, "redirect");
    let Ok(body) = axum::body::to_bytes(req.into_body(), MAX_FORM_BYTES).await else {
        return error_response(
            StatusCode::BAD_REQUEST,
            "bad_request",
            "unreadable login body",
        );
    };
    let Some(form) = parse_login(&content_type, &body) else {
        return error_response(
            StatusCode::BAD_REQUEST,
            "bad_request",
            "malformed login body",
        );
    };

    let requested_redirect = form.redirect.clone().or(query_redirect);
    let snapshot = gateway.snapshot();
    let ttl = gateway.config.token_ttl_seconds;
    let now = gateway.now();
    let signer = gateway.signer.clone();
    // Key derivation is deliberately slow; keep it off the async workers.
    let outcome = tokio::task::spawn_blocking(move || {
        platform_core::auth::login(
            &snapshot.credentials,
            &snapshot.policy,
            &signer,
            &form.username,
            &form.password,
            ttl,
            now,
        )
    })
    .await
    .unwrap_or(Err(platform_core::AuthError::InvalidCredentials));

    let token = match outcome {
        Ok(token) => token,
        Err(_) => {
            if wants_html {
                let mut resp = login_page(
                    gateway,
                    requested_redirect,
                    Some("Invalid username or password."),
                )
                .await;
                *resp.status_mut() = StatusCode::UNAUTHORIZED;
                return resp;
            }
            return error_response(
                StatusCode::UNAUTHORIZED,
                "invalid_credentials",
                "invalid username or password",
            );
        }
    };

    let target = requested_redirect
        .filter(|r| is_local_redirect(r))
        .unwrap_or_else(|| "/".to_string());
    let mut resp = json_response(
        StatusCode::FOUND,
        &json!({ "token": token, "redirect": target }),
    );
    let cookie = format!("{TOKEN_COOKIE}={token}; HttpOnly; Path=/; SameSite=Lax; Max-Age={ttl}");
    if let Ok(v) = HeaderValue::from_str(&cookie) {
        resp.headers_mut().insert(header::SET_COOKIE, v);
    }
    if let Ok(v) = HeaderValue::from_str(&target) {
        resp.headers_mut().insert(header::LOCATION, v);
    }
    resp
}

fn verify(gateway: &Gateway, req: &Request) -> Response {
    let token = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim);
    let Some(token) = token else {
        return error_response(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing bearer token",
        );
    };
    match gateway.signer.verify(token, gateway.now()) {
        Ok(identity) => json_response(StatusCode::OK, &json!(identity)),
        Err(e) => error_response(StatusCode::UNAUTHORIZED, "unauthorized", e.code()),
    }
}
