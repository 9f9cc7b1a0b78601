//! Scenario files: fixtures to install, then ordered requests with expectations.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use platform_core::rbac::{Organisation, Permission, Role, User};
use platform_core::{AuthMode, FixedClock, PlatformConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::stub::{spawn_stub, StubBehavior, StubServer, STUB_NAME_HEADER};
use crate::cli::{encode_id, route_path, AdminClient};
use crate::routing::ListenerKind;
use crate::server::{RunningPlatform, BOOTSTRAP_USER};

const POLL_INTERVAL: Duration = Duration::from_millis(10);
const SCENARIO_SECRET: &str = "harness-scenario-secret";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub default_auth_mode: Option<AuthMode>,
    pub token_ttl_seconds: Option<u64>,
    pub upstream_timeout_seconds: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CredentialFixture {
    pub username: String,
    pub password: String,
    pub user_id: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixtures {
    #[serde(default)]
    pub stubs: Vec<StubBehavior>,
    #[serde(default)]
    pub permissions: Vec<Permission>,
    #[serde(default)]
    pub organisations: Vec<Organisation>,
    #[serde(default)]
    pub roles: Vec<Role>,
    #[serde(default)]
    pub users: Vec<User>,
    #[serde(default)]
    pub credentials: Vec<CredentialFixture>,
    /// Route entries as accepted by the admin API; an `upstream_url` of
    /// `stub:<name>` is replaced by that stub's address.
    #[serde(default)]
    pub routes: Vec<Value>,
}

/// How a request step authenticates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AuthSpec {
    /// Log in through `/auth/login` and send the token.
    Login {
        username: String,
        password: String,
        #[serde(default)]
        cookie: bool,
        /// Remember the token for later `saved` steps.
        save_as: Option<String>,
    },
    /// Use a token minted by the admin API for this user.
    TokenFor {
        user: String,
        #[serde(default)]
        cookie: bool,
        save_as: Option<String>,
    },
    /// Reuse a token remembered by an earlier step.
    Saved {
        name: String,
        #[serde(default)]
        cookie: bool,
    },
    /// Send this exact string as the bearer token.
    Raw { token: String },
    /// The bootstrap administrator's token.
    Admin,
}

fn default_method() -> String {
    "GET".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    #[serde(default = "public")]
    pub listener: ListenerKind,
    #[serde(default = "default_method")]
    pub method: String,
    pub path: String,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    pub auth: Option<AuthSpec>,
    pub body: Option<String>,
}

fn public() -> ListenerKind {
    ListenerKind::Public
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdminCall {
    #[serde(default = "default_method")]
    pub method: String,
    /// Either a raw admin path, or a route prefix via `route`.
    pub path: Option<String>,
    pub route: Option<String>,
    pub body: Option<Value>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    pub status: Option<u16>,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    #[serde(default)]
    pub headers_absent: Vec<String>,
    #[serde(default)]
    pub body_contains: Vec<String>,
    /// Body must be byte-identical to an earlier step's body.
    pub body_same_as: Option<String>,
    /// Name of the stub that must have answered.
    pub served_by: Option<String>,
    /// Headers the upstream must have received (from an echo stub body).
    #[serde(default)]
    pub upstream_headers: BTreeMap<String, String>,
    #[serde(default)]
    pub upstream_headers_present: Vec<String>,
    #[serde(default)]
    pub upstream_headers_absent: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub name: String,
    pub request: Option<RequestSpec>,
    pub admin: Option<AdminCall>,
    pub advance_clock_seconds: Option<u64>,
    #[serde(default)]
    pub expect: Expect,
    /// Retry until the expectations hold or this many milliseconds pass.
    pub within_ms: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub config: ConfigOverrides,
    #[serde(default)]
    pub fixtures: Fixtures,
    pub steps: Vec<Step>,
}

impl Scenario {
    pub fn from_json(source: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(source).map_err(|e| HarnessError::Scenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let source = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Scenario(format!("{}: {e}", path.display())))?;
        Self::from_json(&source)
            .map_err(|e| HarnessError::Scenario(format!("{}: {e}", path.display())))
    }
}

/// Infrastructure failures, as opposed to expectation mismatches.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("platform failed to start: {0}")]
    Platform(String),
    #[error("stub {0} failed to start: {1}")]
    Stub(String, String),
    #[error("installing fixtures: {0}")]
    Fixture(String),
    #[error("step {step}: {message}")]
    Transport { step: String, message: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct StepReport {
    pub name: String,
    pub passed: bool,
    pub diffs: Vec<String>,
    pub status: Option<u16>,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub passed: bool,
    pub steps: Vec<StepReport>,
    pub elapsed_ms: u128,
}

impl ScenarioReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{} {} ({} ms)\n",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed_ms
        );
        for step in &self.steps {
            out.push_str(&format!(
                "  {} {} ({} ms)\n",
                if step.passed { "ok  " } else { "FAIL" },
                step.name,
                step.elapsed_ms
            ));
            for d in &step.diffs {
                out.push_str(&format!("       {d}\n"));
            }
        }
        out
    }
}

struct Observed {
    status: u16,
    headers: reqwest::header::HeaderMap,
    body: Vec<u8>,
}

struct Run {
    platform: RunningPlatform,
    clock: FixedClock,
    stubs: HashMap<String, StubServer>,
    http: reqwest::Client,
    admin: AdminClient,
    admin_token: String,
    bodies: HashMap<String, Vec<u8>>,
    tokens: Mutex<HashMap<String, String>>,
}

/// Starts a fresh platform and stubs, installs fixtures, runs each step and
/// tears everything down.
pub async fn run_scenario(scenario: &Scenario) -> Result<ScenarioReport, HarnessError> {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| HarnessError::Platform(e.to_string()))?;
    let mut config = PlatformConfig::ephemeral(dir.path().join("state.json"), SCENARIO_SECRET);
    config.bootstrap_admin = true;
    if let Some(mode) = scenario.config.default_auth_mode {
        config.default_auth_mode = mode;
    }
    if let Some(ttl) = scenario.config.token_ttl_seconds {
        config.token_ttl_seconds = ttl;
    }
    if let Some(t) = scenario.config.upstream_timeout_seconds {
        config.upstream_timeout_seconds = t;
    }
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let clock = FixedClock::new(now);
    let platform = RunningPlatform::start(config, Arc::new(clock.clone()))
        .await
        .map_err(|e| HarnessError::Platform(format!("{e:#}")))?;
    let password = platform
        .bootstrap_password
        .clone()
        .ok_or_else(|| HarnessError::Platform("no bootstrap administrator".into()))?;

    let http = reqwest::Client::builder()
        .redirect(reqwest::redirect::Policy::none())
        .build()
        .map_err(|e| HarnessError::Platform(e.to_string()))?;
    let admin_token = login(&http, &platform.internal_url(), BOOTSTRAP_USER, &password)
        .await
        .map_err(|e| HarnessError::Platform(format!("bootstrap login: {e}")))?;

    let mut stubs = HashMap::new();
    for behavior in &scenario.fixtures.stubs {
        let stub = spawn_stub(behavior.clone(), Some(&platform.public_url()))
            .await
            .map_err(|e| HarnessError::Stub(behavior.name.clone(), e.to_string()))?;
        stubs.insert(behavior.name.clone(), stub);
    }

    let mut run = Run {
        admin: AdminClient::new(&platform.internal_url(), Some(admin_token.clone())),
        platform,
        clock,
        stubs,
        http,
        admin_token,
        bodies: HashMap::new(),
        tokens: Mutex::new(HashMap::new()),
    };
    let result = run.execute(scenario, started).await;
    run.platform.shutdown().await;
    result
}

impl Run {
    async fn execute(
        &mut self,
        scenario: &Scenario,
        started: Instant,
    ) -> Result<ScenarioReport, HarnessError> {
        self.install(&scenario.fixtures).await?;
        let mut steps = Vec::new();
        for step in &scenario.steps {
            steps.push(self.step(step).await?);
        }
        Ok(ScenarioReport {
            name: scenario.name.clone(),
            passed: steps.iter().all(|s| s.passed),
            steps,
            elapsed_ms: started.elapsed().as_millis(),
        })
    }

    fn substitute_stub(&self, mut route: Value) -> Result<Value, String> {
        if let Some(url) = route.get("upstream_url").and_then(|u| u.as_str()) {
            if let Some(name) = url.strip_prefix("stub:") {
                let stub = self
                    .stubs
                    .get(name)
                    .ok_or_else(|| format!("unknown stub {name:?}"))?;
                route["upstream_url"] = json!(stub.url());
            }
        }
        Ok(route)
    }

    async fn install(&self, f: &Fixtures) -> Result<(), HarnessError> {
        let fail = |e: crate::cli::CliError| HarnessError::Fixture(e.to_string());
        for p in &f.permissions {
            self.admin
                .put(
                    &format!("/admin/permissions/{}", encode_id(p.id.as_str())),
                    &json!(p),
                )
                .await
                .map_err(fail)?;
        }
        for o in &f.organisations {
            self.admin
                .put(
                    &format!("/admin/organisations/{}", encode_id(o.id.as_str())),
                    &json!(o),
                )
                .await
                .map_err(fail)?;
        }
        for r in &f.roles {
            self.admin
                .put(
                    &format!("/admin/roles/{}", encode_id(r.id.as_str())),
                    &json!(r),
                )
                .await
                .map_err(fail)?;
        }
        for u in &f.users {
            self.admin
                .put(
                    &format!("/admin/users/{}", encode_id(u.id.as_str())),
                    &json!(u),
                )
                .await
                .map_err(fail)?;
        }
        for c in &f.credentials {
            let user_id = c.user_id.clone().unwrap_or_else(|| c.username.clone());
            self.admin
                .put(
                    &format!("/admin/credentials/{}", encode_id(&c.username)),
                    &json!({ "password": c.password, "user_id": user_id }),
                )
                .await
                .map_err(fail)?;
        }
        for route in &f.routes {
            let route = self
                .substitute_stub(route.clone())
                .map_err(HarnessError::Fixture)?;
            let prefix = route["path_prefix"]
                .as_str()
                .ok_or_else(|| HarnessError::Fixture("route without path_prefix".into()))?
                .to_string();
            self.admin
                .put(&route_path(&prefix), &route)
                .await
                .map_err(fail)?;
        }
        Ok(())
    }

    async fn step(&mut self, step: &Step) -> Result<StepReport, HarnessError> {
        let started = Instant::now();
        let actions = [
            step.request.is_some(),
            step.admin.is_some(),
            step.advance_clock_seconds.is_some(),
        ];
        if actions.iter().filter(|a| **a).count() != 1 {
            return Err(HarnessError::Scenario(format!(
                "step {:?} needs exactly one of request, admin, advance_clock_seconds",
                step.name
            )));
        }
        if let Some(secs) = step.advance_clock_seconds {
            self.clock.advance(secs);
            return Ok(StepReport {
                name: step.name.clone(),
                passed: true,
                diffs: vec![],
                status: None,
                elapsed_ms: 0,
            });
        }

        let deadline = step.within_ms.map(|ms| started + Duration::from_millis(ms));
        loop {
            let observed = self.perform(step).await?;
            let diffs = self.compare(&step.expect, &observed);
            let retry = !diffs.is_empty() && deadline.is_some_and(|d| Instant::now() < d);
            if retry {
                tokio::time::sleep(POLL_INTERVAL).await;
                continue;
            }
            let status = observed.status;
            self.bodies.insert(step.name.clone(), observed.body);
            return Ok(StepReport {
                name: step.name.clone(),
                passed: diffs.is_empty(),
                diffs,
                status: Some(status),
                elapsed_ms: started.elapsed().as_millis(),
            });
        }
    }

    async fn perform(&self, step: &Step) -> Result<Observed, HarnessError> {
        let transport = |message: String| HarnessError::Transport {
            step: step.name.clone(),
            message,
        };
        let request = if let Some(spec) = &step.request {
            let base = match spec.listener {
                ListenerKind::Public => self.platform.public_url(),
                ListenerKind::Internal => self.platform.internal_url(),
            };
            let method = reqwest::Method::from_bytes(spec.method.as_bytes())
                .map_err(|e| transport(e.to_string()))?;
            let mut req = self.http.request(method, format!("{base}{}", spec.path));
            for (k, v) in &spec.headers {
                req = req.header(k, v);
            }
            if let Some(auth) = &spec.auth {
                let (token, cookie) = self.token_for(auth).await.map_err(transport)?;
                req = if cookie {
                    req.header(
                        "cookie",
                        format!("{}={token}", crate::routing::TOKEN_COOKIE),
                    )
                } else {
                    req.bearer_auth(token)
                };
            }
            if let Some(body) = &spec.body {
                req = req.body(body.clone());
            }
            req
        } else {
            let call = step.admin.as_ref().expect("checked above");
            let path = match (&call.path, &call.route) {
                (Some(p), _) => p.clone(),
                (None, Some(r)) => route_path(r),
                (None, None) => {
                    return Err(HarnessError::Scenario(format!(
                        "step {:?}: admin call without path",
                        step.name
                    )))
                }
            };
            let method = reqwest::Method::from_bytes(call.method.as_bytes())
                .map_err(|e| transport(e.to_string()))?;
            let mut req = self
                .http
                .request(method, format!("{}{path}", self.platform.internal_url()))
                .bearer_auth(&self.admin_token);
            if let Some(body) = &call.body {
                req = req.json(&self.substitute_stub(body.clone()).map_err(transport)?);
            }
            req
        };
        let resp = request.send().await.map_err(|e| transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let headers = resp.headers().clone();
        let body = resp
            .bytes()
            .await
            .map_err(|e| transport(e.to_string()))?
            .to_vec();
        Ok(Observed {
            status,
            headers,
            body,
        })
    }

    async fn token_for(&self, auth: &AuthSpec) -> Result<(String, bool), String> {
        let (token, cookie, save_as) = match auth {
            AuthSpec::Login {
                username,
                password,
                cookie,
                save_as,
            } => (
                login(&self.http, &self.platform.public_url(), username, password).await?,
                *cookie,
                save_as,
            ),
            AuthSpec::TokenFor {
                user,
                cookie,
                save_as,
            } => {
                let v = self
                    .admin
                    .post("/admin/tokens", &json!({ "user_id": user }))
                    .await
                    .map_err(|e| e.to_string())?;
                let token = v["token"]
                    .as_str()
                    .ok_or("no token in response")?
                    .to_string();
                (token, *cookie, save_as)
            }
            AuthSpec::Saved { name, cookie } => {
                let token = self.tokens.lock().get(name).cloned();
                return token
                    .map(|t| (t, *cookie))
                    .ok_or_else(|| format!("no saved token {name:?}"));
            }
            AuthSpec::Raw { token } => return Ok((token.clone(), false)),
            AuthSpec::Admin => return Ok((self.admin_token.clone(), false)),
        };
        if let Some(name) = save_as {
            self.tokens.lock().insert(name.clone(), token.clone());
        }
        Ok((token, cookie))
    }

    fn compare(&self, expect: &Expect, seen: &Observed) -> Vec<String> {
        let mut diffs = Vec::new();
        if let Some(status) = expect.status {
            if status != seen.status {
                diffs.push(format!(
                    "status: expected {status}, got {} (body {})",
                    seen.status,
                    String::from_utf8_lossy(&seen.body)
                ));
            }
        }
        for (name, want) in &expect.headers {
            let got = seen.headers.get(name).and_then(|v| v.to_str().ok());
            if got != Some(want.as_str()) {
                diffs.push(format!("header {name}: expected {want:?}, got {got:?}"));
            }
        }
        for name in &expect.headers_absent {
            if let Some(v) = seen.headers.get(name) {
                diffs.push(format!("header {name}: expected absent, got {v:?}"));
            }
        }
        let body = String::from_utf8_lossy(&seen.body);
        for needle in &expect.body_contains {
            if !body.contains(needle.as_str()) {
                diffs.push(format!(
                    "body: expected to contain {needle:?}, got {body:?}"
                ));
            }
        }
        if let Some(other) = &expect.body_same_as {
            match self.bodies.get(other) {
                Some(b) if *b == seen.body => {}
                Some(b) => diffs.push(format!(
                    "body: expected bytes of step {other:?} ({:?}), got {body:?}",
                    String::from_utf8_lossy(b)
                )),
                None => diffs.push(format!("body_same_as: no earlier step named {other:?}")),
            }
        }
        if let Some(stub) = &expect.served_by {
            let got = seen
                .headers
                .get(STUB_NAME_HEADER)
                .and_then(|v| v.to_str().ok());
            if got != Some(stub.as_str()) {
                diffs.push(format!("served_by: expected stub {stub:?}, got {got:?}"));
            }
        }
        let wants_echo = !expect.upstream_headers.is_empty()
            || !expect.upstream_headers_present.is_empty()
            || !expect.upstream_headers_absent.is_empty();
        if wants_echo {
            match serde_json::from_slice::<BTreeMap<String, String>>(&seen.body) {
                Err(_) => diffs.push(format!(
                    "upstream echo: body is not a header echo: {body:?}"
                )),
                Ok(echo) => {
                    for (name, want) in &expect.upstream_headers {
                        let got = echo.get(&name.to_ascii_lowercase());
                        if got != Some(want) {
                            diffs.push(format!(
                                "upstream header {name}: expected {want:?}, got {got:?}"
                            ));
                        }
                    }
                    for name in &expect.upstream_headers_present {
                        if !echo.contains_key(&name.to_ascii_lowercase()) {
                            diffs.push(format!("upstream header {name}: expected present"));
                        }
                    }
                    for name in &expect.upstream_headers_absent {
                        if let Some(v) = echo.get(&name.to_ascii_lowercase()) {
                            diffs.push(format!(
                                "upstream header {name}: expected absent, got {v:?}"
                            ));
                        }
                    }
                }
            }
        }
        diffs
    }
}

async fn login(
    http: &reqwest::Client,
    base: &str,
    username: &str,
    password: &str,
) -> Result<String, String> {
    let resp = http
        .post(format!("{base}/auth/login"))
        .json(&json!({ "username": username, "password": password }))
        .send()
        .await
        .map_err(|e| e.to_string())?;
    let status = resp.status();
    let v: Value = resp.json().await.map_err(|e| e.to_string())?;
    v["token"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| format!("login as {username} failed with {status}: {v}"))
}
