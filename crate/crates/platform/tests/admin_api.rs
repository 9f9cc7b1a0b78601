mod common;

use common::{raw_status, route, TestPlatform};
use platform::cli::CliError;
use serde_json::{json, Value};

fn status_of(err: CliError) -> u16 {
    match err {
        CliError::Http { status, .. } => status,
        other => panic!("expected an HTTP error, got {other}"),
    }
}

#[tokio::test]
async fn health_needs_no_token_and_reports_state() {
    let p = TestPlatform::start().await;
    let before: Value = p
        .http
        .get(p.internal("/admin/health"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let v = p
        .put_route(route(
            "/my-product-1",
            "https://product-webapp-1.mydomain.local",
        ))
        .await;
    let after: Value = p
        .http
        .get(p.internal("/admin/health"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(after["state_version"], v);
    assert!(v > before["state_version"].as_u64().unwrap());
    assert_eq!(after["routes_count"], 1);
}

#[tokio::test]
async fn missing_or_bad_token_is_401() {
    let p = TestPlatform::start().await;
    assert_eq!(
        p.http
            .get(p.internal("/admin/routes"))
            .send()
            .await
            .unwrap()
            .status(),
        401
    );
    let resp = p
        .http
        .get(p.internal("/admin/routes"))
        .bearer_auth("a.b.c")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 401);
}

#[tokio::test]
async fn non_admin_is_403_with_decision() {
    let p = TestPlatform::start().await;
    p.install_demo_policy().await;
    let resp = p
        .http
        .get(p.internal("/admin/routes"))
        .bearer_auth(p.token_for("alice"))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 403);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["decision"]["reason"]["kind"], "NoGrant");
    assert_eq!(body["decision"]["permission"], "platform.admin");
}

#[tokio::test]
async fn route_crud_round_trip() {
    let p = TestPlatform::start().await;
    let admin = p.admin();
    let body = json!({
        "upstream_url": "https://product-webapp-1.mydomain.local",
        "owning_team": "Team 2",
        "description": "Allows users to set up reporting dashboards",
    });
    admin
        .put("/admin/routes/my-product-2", &body)
        .await
        .unwrap();
    let got = admin.get("/admin/routes/%2Fmy-product-2").await.unwrap();
    assert_eq!(got["path_prefix"], "/my-product-2");
    assert_eq!(got["owning_team"], "Team 2");
    // Unset auth mode takes the configured default.
    assert_eq!(got["auth_mode"], "gateway");
    assert_eq!(got["visibility"], "public");
    let list = admin.get("/admin/routes").await.unwrap();
    assert_eq!(list["items"].as_array().unwrap().len(), 1);
    admin.delete("/admin/routes/my-product-2").await.unwrap();
    assert_eq!(
        status_of(admin.get("/admin/routes/my-product-2").await.unwrap_err()),
        404
    );
    assert_eq!(
        status_of(
            admin
                .delete("/admin/routes/my-product-2")
                .await
                .unwrap_err()
        ),
        404
    );
}

#[tokio::test]
async fn invalid_routes_are_422() {
    let p = TestPlatform::start().await;
    let admin = p.admin();
    for (id, url) in [
        ("my-product-1", "ftp://x.local"),
        ("my-product-1", "not a url"),
        ("my-product-1", "http://x.local/?q=1"),
        ("a%2F%2Fb", "http://x.local"),
        ("trailing%2F", "http://x.local"),
    ] {
        let err = admin
            .put(
                &format!("/admin/routes/{id}"),
                &json!({ "upstream_url": url }),
            )
            .await
            .unwrap_err();
        assert_eq!(status_of(err), 422, "{id} {url}");
    }
    let err = admin
        .put(
            "/admin/routes/x",
            &json!({ "path_prefix": "/y", "upstream_url": "http://x.local" }),
        )
        .await
        .unwrap_err();
    assert_eq!(status_of(err), 422, "body id must agree with the URL");
    let err = admin
        .put(
            "/admin/routes/x",
            &json!({ "upstream_url": "http://x.local", "colour": "red" }),
        )
        .await
        .unwrap_err();
    assert_eq!(status_of(err), 422, "unknown fields are rejected");
}

#[tokio::test]
async fn referential_integrity_is_409() {
    let p = TestPlatform::start().await;
    p.install_demo_policy().await;
    let admin = p.admin();
    // Role granting a permission that does not exist.
    let err = admin
        .put(
            "/admin/roles/auditor",
            &json!({ "name": "Auditor", "permissions": ["audit.read"] }),
        )
        .await
        .unwrap_err();
    assert_eq!(status_of(err), 409);
    // Permission still granted by org-a.
    assert_eq!(
        status_of(
            admin
                .delete("/admin/permissions/content.a.read")
                .await
                .unwrap_err()
        ),
        409
    );
    // Role still held by alice.
    assert_eq!(
        status_of(admin.delete("/admin/roles/admin").await.unwrap_err()),
        409
    );
    // Permission still required by a route.
    p.put_route(json!({
        "path_prefix": "/reports",
        "upstream_url": "http://reports.local",
        "required_permission": "content.b.read",
    }))
    .await;
    assert_eq!(
        status_of(
            admin
                .delete("/admin/permissions/content.b.read")
                .await
                .unwrap_err()
        ),
        409
    );
    // A route requiring an undefined permission is refused too.
    let err = admin
        .put(
            "/admin/routes/r2",
            &json!({ "upstream_url": "http://x.local", "required_permission": "nope" }),
        )
        .await
        .unwrap_err();
    assert_eq!(status_of(err), 409);
}

#[tokio::test]
async fn check_and_tokens_endpoints() {
    let p = TestPlatform::start().await;
    p.install_demo_policy().await;
    let admin = p.admin();
    let d = admin
        .get("/admin/check?user=bob&perm=content.b.read")
        .await
        .unwrap();
    assert_eq!(d["allowed"], false);
    assert_eq!(d["reason"]["kind"], "NoGrant");
    assert!(d["explanation"].as_str().unwrap().starts_with("denied"));
    let d = admin
        .get("/admin/check?user=alice&perm=content.a.read")
        .await
        .unwrap();
    assert_eq!(d["reason"]["kind"], "OrgGrant");

    let t = admin
        .post(
            "/admin/tokens",
            &json!({ "user_id": "bob", "ttl_seconds": 60 }),
        )
        .await
        .unwrap();
    assert_eq!(t["expires_in"], 60);
    let id = p
        .running
        .gateway
        .signer()
        .verify(t["token"].as_str().unwrap(), p.running.gateway.now())
        .unwrap();
    assert_eq!(id.user_id.as_str(), "bob");
    let err = admin
        .post("/admin/tokens", &json!({ "user_id": "nobody" }))
        .await
        .unwrap_err();
    assert!(matches!(status_of(err), 404 | 422));
}

#[tokio::test]
async fn credentials_never_expose_hashes() {
    let p = TestPlatform::start().await;
    p.install_demo_policy().await;
    let admin = p.admin();
    admin
        .put(
            "/admin/credentials/alice",
            &json!({ "password": "correct horse 9" }),
        )
        .await
        .unwrap();
    let listed = admin.get("/admin/credentials").await.unwrap().to_string();
    assert!(listed.contains("alice"));
    assert!(!listed.contains("hash") && !listed.contains("salt"));
    let err = admin
        .put("/admin/credentials/bob", &json!({ "password": "short" }))
        .await
        .unwrap_err();
    assert_eq!(status_of(err), 422);
}

#[tokio::test]
async fn ui_assets_are_served_without_traversal() {
    let assets = tempfile::tempdir().unwrap();
    std::fs::write(assets.path().join("index.html"), "<h1>console</h1>").unwrap();
    std::fs::write(assets.path().join("app.js"), "console.log(1)").unwrap();
    let dir = assets.path().to_path_buf();
    let p = TestPlatform::start_with(move |c| c.ui_assets_dir = Some(dir)).await;
    let resp = p.http.get(p.internal("/admin/ui/")).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    assert!(resp.headers()["content-type"]
        .to_str()
        .unwrap()
        .starts_with("text/html"));
    assert_eq!(resp.text().await.unwrap(), "<h1>console</h1>");
    let resp = p
        .http
        .get(p.internal("/admin/ui/app.js"))
        .send()
        .await
        .unwrap();
    assert!(resp.headers()["content-type"]
        .to_str()
        .unwrap()
        .contains("javascript"));
    for probe in [
        "/admin/ui/%2e%2e/state.json",
        "/admin/ui/../state.json",
        "/admin/ui/..%2fstate.json",
        "/admin/ui/missing.css",
    ] {
        let status = raw_status(p.running.internal_addr, probe).await;
        assert!(status == 400 || status == 404, "{probe} gave {status}");
    }
}

#[tokio::test]
async fn mutations_are_visible_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("state.json");
    let state2 = state.clone();
    let p = TestPlatform::start_with(move |c| c.state_file = state2).await;
    let v = p.put_route(route("/persisted", "http://p.local")).await;
    p.running.shutdown().await;

    let store = platform_core::Store::open(&state).unwrap();
    assert_eq!(store.version(), v);
    assert!(store.routes().get("/persisted").is_some());
}
