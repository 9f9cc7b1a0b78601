mod common;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use common::{echo_stub, raw_status, route, TestPlatform};
use platform::harness::{spawn_stub, ResponseMode, StubBehavior};
use platform::StaleVersion;
use platform_core::rbac::{Permission, Policy, User};
use platform_core::{CredentialStore, RouteEntry, RouteTable, Snapshot};
use serde_json::{json, Value};

async fn echo_of(resp: reqwest::Response) -> BTreeMap<String, String> {
    assert_eq!(resp.status(), 200);
    resp.json().await.unwrap()
}

#[tokio::test]
async fn refused_upstream_is_502_json() {
    let p = TestPlatform::start().await;
    // Bind then drop to find a port nobody listens on.
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    p.put_route(route("/gone", &format!("http://127.0.0.1:{port}")))
        .await;
    let resp = p.http.get(p.public("/gone/x")).send().await.unwrap();
    assert_eq!(resp.status(), 502);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["error"], "upstream_unreachable");
}

#[tokio::test]
async fn slow_upstream_is_504() {
    let p = TestPlatform::start_with(|c| c.upstream_timeout_seconds = 1).await;
    let slow = spawn_stub(
        StubBehavior {
            response_mode: ResponseMode::Delay(3_000),
            ..StubBehavior::echo("slow")
        },
        None,
    )
    .await
    .unwrap();
    p.put_route(route("/slow", &slow.url())).await;
    let resp = p.http.get(p.public("/slow")).send().await.unwrap();
    assert_eq!(resp.status(), 504);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["error"], "upstream_timeout");
}

#[tokio::test]
async fn upstream_status_and_body_are_relayed() {
    let p = TestPlatform::start().await;
    let fixed = spawn_stub(
        StubBehavior {
            response_mode: ResponseMode::FixedBody {
                status: 418,
                body: "short and stout".into(),
            },
            ..StubBehavior::echo("teapot")
        },
        None,
    )
    .await
    .unwrap();
    let failing = spawn_stub(
        StubBehavior {
            response_mode: ResponseMode::Fail(503),
            ..StubBehavior::echo("down")
        },
        None,
    )
    .await
    .unwrap();
    p.put_route(route("/teapot", &fixed.url())).await;
    p.put_route(route("/down", &failing.url())).await;
    let resp = p.http.get(p.public("/teapot")).send().await.unwrap();
    assert_eq!(resp.status(), 418);
    assert_eq!(resp.headers()["x-stub-name"], "teapot");
    assert_eq!(resp.text().await.unwrap(), "short and stout");
    assert_eq!(
        p.http.get(p.public("/down")).send().await.unwrap().status(),
        503
    );
}

#[tokio::test]
async fn passthrough_forwards_credentials_byte_identical() {
    let p = TestPlatform::start().await;
    let stub = echo_stub("app").await;
    let mut r = route("/pt", &stub.url());
    r["auth_mode"] = json!("passthrough");
    p.put_route(r).await;
    let cookie = "theme=dark; platform_token=opaque.value.here; lang=en";
    let echo = echo_of(
        p.http
            .get(p.public("/pt/a?b=c"))
            .header("Authorization", "Bearer not-even-a-jwt")
            .header("Cookie", cookie)
            .send()
            .await
            .unwrap(),
    )
    .await;
    assert_eq!(echo["authorization"], "Bearer not-even-a-jwt");
    assert_eq!(echo["cookie"], cookie);
    assert!(!echo.contains_key("x-platform-user-id"));
}

#[tokio::test]
async fn gateway_mode_replaces_credentials_with_identity() {
    let p = TestPlatform::start().await;
    p.install_demo_policy().await;
    let stub = echo_stub("app").await;
    let mut r = route("/gw", &stub.url());
    r["auth_mode"] = json!("gateway");
    r["required_permission"] = json!("content.a.read");
    p.put_route(r).await;
    let token = p.token_for("alice");
    let echo = echo_of(
        p.http
            .get(p.public("/gw"))
            .header("Cookie", format!("theme=dark; platform_token={token}"))
            .send()
            .await
            .unwrap(),
    )
    .await;
    assert_eq!(echo["x-platform-user-id"], "alice");
    assert_eq!(echo["x-platform-org"], "org-a");
    assert_eq!(echo["x-platform-roles"], "admin");
    assert_eq!(echo["cookie"], "theme=dark");
    assert!(!echo.contains_key("authorization"));
}

#[tokio::test]
async fn hop_by_hop_and_forwarding_headers() {
    let p = TestPlatform::start().await;
    let stub = echo_stub("app").await;
    p.put_route(route("/h", &stub.url())).await;
    let echo = echo_of(
        p.http
            .get(p.public("/h"))
            .header("Connection", "x-drop-me")
            .header("X-Drop-Me", "1")
            .header("Proxy-Authorization", "Basic Zm9vOmJhcg==")
            .header("X-Forwarded-For", "203.0.113.7")
            .header("X-Keep", "kept")
            .send()
            .await
            .unwrap(),
    )
    .await;
    assert!(!echo.contains_key("x-drop-me"));
    assert!(!echo.contains_key("proxy-authorization"));
    assert_eq!(echo["x-keep"], "kept");
    assert_eq!(echo["x-forwarded-for"], "203.0.113.7, 127.0.0.1");
    assert_eq!(echo["x-forwarded-proto"], "http");
    assert_eq!(echo["x-forwarded-host"], p.running.public_addr.to_string());
}

#[tokio::test]
async fn strip_prefix_rewrites_the_upstream_path() {
    let p = TestPlatform::start().await;
    let stub = echo_stub("app").await;
    let mut r = route("/my-product-1", &stub.url());
    r["strip_prefix"] = json!(true);
    p.put_route(r).await;
    p.put_route(route("/my-product-2", &stub.url())).await;
    let get = |path: &str| p.http.get(p.public(path)).send();
    assert_eq!(
        get("/my-product-1/reports?q=1").await.unwrap().headers()["x-stub-path"],
        "/reports?q=1"
    );
    assert_eq!(
        get("/my-product-1").await.unwrap().headers()["x-stub-path"],
        "/"
    );
    assert_eq!(
        get("/my-product-2/x").await.unwrap().headers()["x-stub-path"],
        "/my-product-2/x"
    );
}

#[tokio::test]
async fn login_needed_responses() {
    let p = TestPlatform::start().await;
    p.install_demo_policy().await;
    let stub = echo_stub("app").await;
    let mut r = route("/my-product-2", &stub.url());
    r["required_permission"] = json!("content.b.read");
    p.put_route(r).await;

    let resp = p
        .http
        .get(p.public("/my-product-2?tab=1"))
        .header("Accept", "text/html,*/*")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 302);
    assert_eq!(
        resp.headers()["location"],
        "/auth/login?redirect=%2Fmy-product-2%3Ftab%3D1"
    );

    let resp = p.http.get(p.public("/my-product-2")).send().await.unwrap();
    assert_eq!(resp.status(), 401);

    let expired = p.token_for("bob");
    p.clock.advance(7_200);
    let resp = p
        .http
        .get(p.public("/my-product-2"))
        .bearer_auth(expired)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 401);

    let resp = p
        .http
        .get(p.public("/my-product-2"))
        .bearer_auth(p.token_for("bob"))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 403);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["decision"]["reason"]["kind"], "NoGrant");
}

#[tokio::test]
async fn fallback_login_page_without_assets() {
    let p = TestPlatform::start().await;
    let resp = p
        .http
        .get(p.public("/auth/login?redirect=%2Fx%22%3E"))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    let page = resp.text().await.unwrap();
    assert!(page.contains("<form method=\"post\" action=\"/auth/login\">"));
    assert!(page.contains("value=\"/x&quot;&gt;\""));
}

#[tokio::test]
async fn malformed_paths_are_400() {
    let p = TestPlatform::start().await;
    let stub = echo_stub("app").await;
    p.put_route(route("/", &stub.url())).await;
    for path in ["/a/%2e%2e/admin", "/a/../admin", "/%ff", "/a%00b", "/a/./b"] {
        assert_eq!(raw_status(p.running.public_addr, path).await, 400, "{path}");
    }
}

fn snapshot(version: u64, upstream: &str, perm: &str) -> Arc<Snapshot> {
    let mut policy = Policy::default();
    policy
        .define(Permission {
            id: perm.into(),
            description: String::new(),
        })
        .unwrap();
    let mut user = User {
        id: "u".into(),
        name: "U".into(),
        organisation: None,
        roles: Default::default(),
    };
    let mut role = platform_core::rbac::Role {
        id: "r".into(),
        name: "R".into(),
        permissions: Default::default(),
    };
    role.permissions.insert(perm.into());
    policy.define(role).unwrap();
    user.roles.insert("r".into());
    policy.define(user).unwrap();
    let entry = RouteEntry {
        required_permission: Some(perm.into()),
        ..RouteEntry::new("/atom", upstream)
    };
    Arc::new(Snapshot {
        version,
        routes: Arc::new(RouteTable::from_entries(version, [entry]).unwrap()),
        policy: Arc::new(policy),
        credentials: Arc::new(CredentialStore::new()),
    })
}

/// Each version pairs a route permission with a policy that grants exactly
/// that permission. A request mixing two versions would be denied.
#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn snapshots_swap_atomically_under_load() {
    let p = TestPlatform::start_with(|c| c.bootstrap_admin = false).await;
    let a = echo_stub("a").await;
    let b = echo_stub("b").await;
    let gw = p.running.gateway.clone();
    let base = gw.applied_version() + 1;
    gw.apply_snapshot(snapshot(base, &a.url(), "perm.a"))
        .unwrap();
    // "u" exists only in the hand-built snapshots, not in the store.
    let token = gw
        .signer()
        .issue(&gw.snapshot().policy, "u", 3600, gw.now())
        .unwrap();

    let swapper = {
        let gw = gw.clone();
        let (a, b) = (a.url(), b.url());
        tokio::spawn(async move {
            for v in 1..400u64 {
                let (url, perm) = if v % 2 == 0 {
                    (&a, "perm.a")
                } else {
                    (&b, "perm.b")
                };
                gw.apply_snapshot(snapshot(base + v, url, perm)).unwrap();
                tokio::time::sleep(Duration::from_micros(200)).await;
            }
        })
    };
    let mut handles = Vec::new();
    for _ in 0..1_000 {
        let http = p.http.clone();
        let url = p.public("/atom");
        let token = token.clone();
        handles.push(tokio::spawn(async move {
            let resp = http.get(url).bearer_auth(token).send().await.unwrap();
            (
                resp.status().as_u16(),
                resp.headers()
                    .get("x-stub-name")
                    .map(|v| v.to_str().unwrap().to_string()),
            )
        }));
    }
    let mut served = BTreeMap::new();
    for h in handles {
        let (status, stub) = h.await.unwrap();
        assert_eq!(
            status, 200,
            "a request saw a route from one version and a policy from another"
        );
        *served.entry(stub.unwrap()).or_insert(0) += 1;
    }
    swapper.await.unwrap();
    assert_eq!(served.values().sum::<i32>(), 1_000);
}

#[tokio::test]
async fn stale_snapshots_are_ignored() {
    let p = TestPlatform::start_with(|c| c.bootstrap_admin = false).await;
    let gw = p.running.gateway.clone();
    let v = gw.applied_version();
    gw.apply_snapshot(snapshot(v + 5, "http://five.local", "p"))
        .unwrap();
    gw.apply_snapshot(snapshot(v + 6, "http://six.local", "p"))
        .unwrap();
    assert_eq!(
        gw.apply_snapshot(snapshot(v + 5, "http://five.local", "p")),
        Err(StaleVersion {
            offered: v + 5,
            applied: v + 6
        })
    );
    assert_eq!(gw.applied_version(), v + 6);
    assert_eq!(
        gw.snapshot().routes.get("/atom").unwrap().upstream_url,
        "http://six.local"
    );
}
