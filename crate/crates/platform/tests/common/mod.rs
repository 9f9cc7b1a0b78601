#![allow(dead_code)]

use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use platform::cli::{route_path, AdminClient};
use platform::harness::{spawn_stub, StubBehavior, StubServer};
use platform::server::BOOTSTRAP_USER;
use platform::RunningPlatform;
use platform_core::{FixedClock, PlatformConfig};
use serde_json::{json, Value};

pub const SECRET: &str = "integration-test-secret";

pub struct TestPlatform {
    pub running: RunningPlatform,
    pub clock: FixedClock,
    pub admin_token: String,
    pub http: reqwest::Client,
    _dir: tempfile::TempDir,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap()
        .as_secs()
}

impl TestPlatform {
    pub async fn start() -> Self {
        Self::start_with(|_| {}).await
    }

    pub async fn start_with(tweak: impl FnOnce(&mut PlatformConfig)) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut config = PlatformConfig::ephemeral(dir.path().join("state.json"), SECRET);
        config.bootstrap_admin = true;
        tweak(&mut config);
        let clock = FixedClock::new(unix_now());
        let running = RunningPlatform::start(config, Arc::new(clock.clone()))
            .await
            .unwrap();
        // Empty when the test disabled the bootstrap administrator.
        let admin_token = running
            .gateway
            .signer()
            .issue(
                &running.store.policy(),
                BOOTSTRAP_USER,
                3600,
                clock_now(&clock),
            )
            .unwrap_or_default();
        TestPlatform {
            running,
            clock,
            admin_token,
            http: reqwest::Client::builder()
                .redirect(reqwest::redirect::Policy::none())
                .build()
                .unwrap(),
            _dir: dir,
        }
    }

    pub fn admin(&self) -> AdminClient {
        AdminClient::new(&self.running.internal_url(), Some(self.admin_token.clone()))
    }

    pub fn public(&self, path: &str) -> String {
        format!("{}{path}", self.running.public_url())
    }

    pub fn internal(&self, path: &str) -> String {
        format!("{}{path}", self.running.internal_url())
    }

    pub fn token_for(&self, user: &str) -> String {
        self.running
            .gateway
            .signer()
            .issue(
                &self.running.store.policy(),
                user,
                3600,
                clock_now(&self.clock),
            )
            .unwrap()
    }

    /// Installs the Alice/Bob policy.
    pub async fn install_demo_policy(&self) {
        let admin = self.admin();
        for entity in platform::fixtures::policy() {
            let (path, body) = platform::cli::entity_request(&entity);
            admin.put(&path, &body).await.unwrap();
        }
    }

    pub async fn put_route(&self, route: Value) -> u64 {
        let prefix = route["path_prefix"].as_str().unwrap().to_string();
        let ack = self
            .admin()
            .put(&route_path(&prefix), &route)
            .await
            .unwrap();
        ack["version"].as_u64().unwrap()
    }
}

fn clock_now(clock: &FixedClock) -> u64 {
    use platform_core::Clock;
    clock.now()
}

pub async fn echo_stub(name: &str) -> StubServer {
    spawn_stub(StubBehavior::echo(name), None).await.unwrap()
}

/// Sends a request line verbatim, bypassing client-side path normalisation.
pub async fn raw_status(addr: std::net::SocketAddr, path: &str) -> u16 {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let mut conn = tokio::net::TcpStream::connect(addr).await.unwrap();
    let req = format!("GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n");
    conn.write_all(req.as_bytes()).await.unwrap();
    let mut buf = Vec::new();
    conn.read_to_end(&mut buf).await.unwrap();
    let head = String::from_utf8_lossy(&buf);
    head.split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

pub fn route(prefix: &str, upstream: &str) -> Value {
    json!({ "path_prefix": prefix, "upstream_url": upstream })
}
