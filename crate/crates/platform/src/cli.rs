//! Operator command line: `serve` plus thin clients over the admin API.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use platform_core::rbac::Entity;
use platform_core::{AuthMode, PlatformConfig, StateError, Store, SystemClock, Visibility};
use serde_json::{json, Value};

use crate::fixtures;
use crate::server::{shutdown_signal, RunningPlatform};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STATE: i32 = 3;
pub const EXIT_UNAUTHORIZED: i32 = 4;
pub const EXIT_FORBIDDEN: i32 = 5;
pub const EXIT_INVALID: i32 = 6;
pub const EXIT_NETWORK: i32 = 7;
pub const EXIT_NOT_FOUND: i32 = 8;
pub const EXIT_CONFLICT: i32 = 9;

#[derive(Debug, Parser)]
#[command(name = "platform", version, about = "SaaS platform gateway")]
pub struct Cli {
    /// Base URL of the internal listener.
    #[arg(
        long,
        global = true,
        env = "PLATFORM_ADMIN_URL",
        default_value = "http://127.0.0.1:8081"
    )]
    pub url: String,
    /// Admin bearer token.
    #[arg(long, global = true, env = "PLATFORM_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the gateway until SIGINT/SIGTERM.
    Serve {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Exchange a username and password for a token (printed to stdout).
    Login {
        #[arg(long)]
        username: String,
        #[arg(long, env = "PLATFORM_PASSWORD", hide_env_values = true)]
        password: String,
    },
    #[command(subcommand)]
    Route(RouteCmd),
    #[command(subcommand)]
    Perm(PermCmd),
    #[command(subcommand)]
    Role(RoleCmd),
    #[command(subcommand)]
    Org(OrgCmd),
    #[command(subcommand)]
    User(UserCmd),
    #[command(subcommand)]
    Grant(GrantCmd),
    #[command(subcommand)]
    Assign(AssignCmd),
    #[command(subcommand)]
    Token(TokenCmd),
    /// Ask whether a user holds a permission (or may use a route).
    Check {
        #[arg(long)]
        user: String,
        #[arg(long, conflicts_with = "route", required_unless_present = "route")]
        perm: Option<String>,
        #[arg(long)]
        route: Option<String>,
    },
    /// Install the demo routes, organisations, roles and users.
    SeedDemo {
        /// Also set the demo users' passwords.
        #[arg(long)]
        with_credentials: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VisibilityArg {
    Public,
    Internal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AuthModeArg {
    Gateway,
    Passthrough,
}

#[derive(Debug, Subcommand)]
pub enum RouteCmd {
    Add(RouteAdd),
    List,
    Rm { path: String },
}

#[derive(Debug, Args)]
pub struct RouteAdd {
    pub path: String,
    pub upstream: String,
    #[arg(long, default_value = "")]
    pub team: String,
    #[arg(long, default_value = "")]
    pub desc: String,
    #[arg(long, value_enum)]
    pub visibility: Option<VisibilityArg>,
    #[arg(long)]
    pub perm: Option<String>,
    /// Defaults to the server's configured default.
    #[arg(long, value_enum)]
    pub auth_mode: Option<AuthModeArg>,
    #[arg(long)]
    pub strip_prefix: bool,
}

#[derive(Debug, Subcommand)]
pub enum PermCmd {
    Add {
        id: String,
        #[arg(long, default_value = "")]
        desc: String,
    },
    List,
}

#[derive(Debug, Subcommand)]
pub enum RoleCmd {
    Add {
        id: String,
        #[arg(long, default_value = "")]
        name: String,
        #[arg(long = "perm")]
        perms: Vec<String>,
    },
    List,
}

#[derive(Debug, Subcommand)]
pub enum OrgCmd {
    Add {
        id: String,
        #[arg(long, default_value = "")]
        name: String,
        #[arg(long = "perm")]
        perms: Vec<String>,
    },
    List,
}

#[derive(Debug, Subcommand)]
pub enum UserCmd {
    Add {
        id: String,
        #[arg(long, default_value = "")]
        name: String,
        #[arg(long)]
        org: Option<String>,
        #[arg(long = "role")]
        roles: Vec<String>,
        /// Also create login credentials with this password (username = id).
        #[arg(long)]
        password: Option<String>,
    },
    List,
}

#[derive(Debug, Subcommand)]
pub enum GrantCmd {
    /// Add a permission to a role.
    Role { role: String, perm: String },
    /// Add a permission to an organisation.
    Org { org: String, perm: String },
}

#[derive(Debug, Subcommand)]
pub enum AssignCmd {
    /// Give a user a role.
    Role { user: String, role: String },
}

#[derive(Debug, Subcommand)]
pub enum TokenCmd {
    Issue {
        #[arg(long)]
        user: String,
        #[arg(long)]
        ttl: Option<u64>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    State(String),
    #[error("HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("cannot reach {url}: {message}")]
    Network { url: String, message: String },
    #[error("denied: {0}")]
    Denied(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::State(_) => EXIT_STATE,
            CliError::Network { .. } => EXIT_NETWORK,
            CliError::Denied(_) => EXIT_FORBIDDEN,
            CliError::Http { status, .. } => match status {
                401 => EXIT_UNAUTHORIZED,
                403 => EXIT_FORBIDDEN,
                404 => EXIT_NOT_FOUND,
                409 => EXIT_CONFLICT,
                422 => EXIT_INVALID,
                _ => 1,
            },
            CliError::Other(_) => 1,
        }
    }
}

/// Minimal JSON client for the admin API.
pub struct AdminClient {
    base: String,
    token: Option<String>,
    http: reqwest::Client,
}

impl AdminClient {
    pub fn new(base: &str, token: Option<String>) -> Self {
        AdminClient {
            base: base.trim_end_matches('/').to_string(),
            token,
            http: reqwest::Client::builder()
                .redirect(reqwest::redirect::Policy::none())
                .build()
                .expect("http client"),
        }
    }

    async fn send(
        &self,
        method: reqwest::Method,
        path: &str,
        body: Option<&Value>,
    ) -> Result<Value, CliError> {
        let url = format!("{}{}", self.base, path);
        let mut req = self.http.request(method, &url);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await.map_err(|e| CliError::Network {
            url: url.clone(),
            message: e.to_string(),
        })?;
        let status = resp.status();
        let text = resp.text().await.unwrap_or_default();
        let value: Value = serde_json::from_str(&text).unwrap_or(Value::String(text));
        if status.is_success() || status.is_redirection() {
            return Ok(value);
        }
        let message = value
            .get("reason")
            .and_then(|r| r.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| value.to_string());
        Err(CliError::Http {
            status: status.as_u16(),
            message,
        })
    }

    pub async fn get(&self, path: &str) -> Result<Value, CliError> {
        self.send(reqwest::Method::GET, path, None).await
    }

    pub async fn put(&self, path: &str, body: &Value) -> Result<Value, CliError> {
        self.send(reqwest::Method::PUT, path, Some(body)).await
    }

    pub async fn post(&self, path: &str, body: &Value) -> Result<Value, CliError> {
        self.send(reqwest::Method::POST, path, Some(body)).await
    }

    pub async fn delete(&self, path: &str) -> Result<Value, CliError> {
        self.send(reqwest::Method::DELETE, path, None).await
    }
}

pub fn encode_id(id: &str) -> String {
    percent_encoding::utf8_percent_encode(id, percent_encoding::NON_ALPHANUMERIC).to_string()
}

pub fn route_path(prefix: &str) -> String {
    format!("/admin/routes/{}", encode_id(prefix))
}

/// Runs a parsed command line and returns the process exit code.
pub async fn run(cli: Cli) -> i32 {
    match dispatch(cli).await {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn print_version(json_out: bool, v: &Value) {
    if json_out {
        println!("{v}");
    } else if let Some(n) = v.get("version") {
        println!("ok (state version {n})");
    } else {
        println!("ok");
    }
}

fn items(v: &Value) -> Vec<Value> {
    v.get("items")
        .and_then(|i| i.as_array())
        .cloned()
        .unwrap_or_default()
}

fn print_table(headers: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    println!("{}", line(headers.iter().map(|h| h.to_string()).collect()));
    for row in rows {
        println!("{}", line(row.clone()));
    }
}

fn s(v: &Value, key: &str) -> String {
    match v.get(key) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(Value::Array(a)) => a
            .iter()
            .map(|x| {
                x.as_str()
                    .map(str::to_string)
                    .unwrap_or_else(|| x.to_string())
            })
            .collect::<Vec<_>>()
            .join(","),
        Some(other) => other.to_string(),
    }
}

async fn add_to_set(
    client: &AdminClient,
    path: &str,
    field: &str,
    value: &str,
) -> Result<Value, CliError> {
    let mut item = client.get(path).await?;
    let set = item
        .get_mut(field)
        .and_then(|f| f.as_array_mut())
        .ok_or_else(|| CliError::Other(format!("{path} has no {field} list")))?;
    if !set.iter().any(|x| x.as_str() == Some(value)) {
        set.push(json!(value));
    }
    client.put(path, &item).await
}

pub fn entity_request(entity: &Entity) -> (String, Value) {
    match entity {
        Entity::Permission(p) => (
            format!("/admin/permissions/{}", encode_id(p.id.as_str())),
            json!(p),
        ),
        Entity::Role(r) => (
            format!("/admin/roles/{}", encode_id(r.id.as_str())),
            json!(r),
        ),
        Entity::Organisation(o) => (
            format!("/admin/organisations/{}", encode_id(o.id.as_str())),
            json!(o),
        ),
        Entity::User(u) => (
            format!("/admin/users/{}", encode_id(u.id.as_str())),
            json!(u),
        ),
    }
}

async fn dispatch(cli: Cli) -> Result<(), CliError> {
    let client = AdminClient::new(&cli.url, cli.token.clone());
    let json_out = cli.json;
    match cli.command {
        Command::Serve { config } => serve(config).await,
        Command::Login { username, password } => {
            let v = client
                .post(
                    "/auth/login",
                    &json!({ "username": username, "password": password }),
                )
                .await?;
            let token = v
                .get("token")
                .and_then(|t| t.as_str())
                .ok_or_else(|| CliError::Other("login response carried no token".into()))?;
            println!("{token}");
            Ok(())
        }
        Command::Route(RouteCmd::Add(a)) => {
            let mut body = json!({
                "path_prefix": a.path,
                "upstream_url": a.upstream,
                "owning_team": a.team,
                "description": a.desc,
                "strip_prefix": a.strip_prefix,
            });
            if let Some(v) = a.visibility {
                body["visibility"] = json!(match v {
                    VisibilityArg::Public => Visibility::Public,
                    VisibilityArg::Internal => Visibility::Internal,
                });
            }
            if let Some(m) = a.auth_mode {
                body["auth_mode"] = json!(match m {
                    AuthModeArg::Gateway => AuthMode::Gateway,
                    AuthModeArg::Passthrough => AuthMode::Passthrough,
                });
            }
            if let Some(p) = a.perm {
                body["required_permission"] = json!(p);
            }
            let v = client.put(&route_path(&a.path), &body).await?;
            print_version(json_out, &v);
            Ok(())
        }
        Command::Route(RouteCmd::List) => {
            let v = client.get("/admin/routes").await?;
            if json_out {
                println!("{v}");
                return Ok(());
            }
            let rows: Vec<Vec<String>> = items(&v)
                .iter()
                .map(|r| {
                    vec![
                        s(r, "path_prefix"),
                        s(r, "upstream_url"),
                        s(r, "owning_team"),
                        s(r, "description"),
                        s(r, "visibility"),
                        s(r, "auth_mode"),
                        s(r, "required_permission"),
                    ]
                })
                .collect();
            print_table(
                &[
                    "Path",
                    "Product Web App URL",
                    "Owning Team",
                    "Description",
                    "Visibility",
                    "Auth",
                    "Permission",
                ],
                &rows,
            );
            Ok(())
        }
        Command::Route(RouteCmd::Rm { path }) => {
            let v = client.delete(&route_path(&path)).await?;
            print_version(json_out, &v);
            Ok(())
        }
        Command::Perm(PermCmd::Add { id, desc }) => {
            let v = client
                .put(
                    &format!("/admin/permissions/{}", encode_id(&id)),
                    &json!({ "description": desc }),
                )
                .await?;
            print_version(json_out, &v);
            Ok(())
        }
        Command::Role(RoleCmd::Add { id, name, perms }) => {
            let v = client
                .put(
                    &format!("/admin/roles/{}", encode_id(&id)),
                    &json!({ "name": name, "permissions": perms }),
                )
                .await?;
            print_version(json_out, &v);
            Ok(())
        }
        Command::Org(OrgCmd::Add { id, name, perms }) => {
            let v = client
                .put(
                    &format!("/admin/organisations/{}", encode_id(&id)),
                    &json!({ "name": name, "permissions": perms }),
                )
                .await?;
            print_version(json_out, &v);
            Ok(())
        }
        Command::User(UserCmd::Add {
            id,
            name,
            org,
            roles,
            password,
        }) => {
            let mut v = client
                .put(
                    &format!("/admin/users/{}", encode_id(&id)),
                    &json!({ "name": name, "organisation": org, "roles": roles }),
                )
                .await?;
            if let Some(pw) = password {
                v = client
                    .put(
                        &format!("/admin/credentials/{}", encode_id(&id)),
                        &json!({ "password": pw, "user_id": id }),
                    )
                    .await?;
            }
            print_version(json_out, &v);
            Ok(())
        }
        Command::Perm(PermCmd::List) => {
            list_simple(&client, json_out, "permissions", &["id", "description"]).await
        }
        Command::Role(RoleCmd::List) => {
            list_simple(&client, json_out, "roles", &["id", "name", "permissions"]).await
        }
        Command::Org(OrgCmd::List) => {
            list_simple(
                &client,
                json_out,
                "organisations",
                &["id", "name", "permissions"],
            )
            .await
        }
        Command::User(UserCmd::List) => {
            list_simple(
                &client,
                json_out,
                "users",
                &["id", "name", "organisation", "roles"],
            )
            .await
        }
        Command::Grant(GrantCmd::Role { role, perm }) => {
            let v = add_to_set(
                &client,
                &format!("/admin/roles/{}", encode_id(&role)),
                "permissions",
                &perm,
            )
            .await?;
            print_version(json_out, &v);
            Ok(())
        }
        Command::Grant(GrantCmd::Org { org, perm }) => {
            let v = add_to_set(
                &client,
                &format!("/admin/organisations/{}", encode_id(&org)),
                "permissions",
                &perm,
            )
            .await?;
            print_version(json_out, &v);
            Ok(())
        }
        Command::Assign(AssignCmd::Role { user, role }) => {
            let v = add_to_set(
                &client,
                &format!("/admin/users/{}", encode_id(&user)),
                "roles",
                &role,
            )
            .await?;
            print_version(json_out, &v);
            Ok(())
        }
        Command::Token(TokenCmd::Issue { user, ttl }) => {
            let mut body = json!({ "user_id": user });
            if let Some(ttl) = ttl {
                body["ttl_seconds"] = json!(ttl);
            }
            let v = client.post("/admin/tokens", &body).await?;
            if json_out {
                println!("{v}");
            } else {
                println!("{}", v["token"].as_str().unwrap_or_default());
            }
            Ok(())
        }
        Command::Check { user, perm, route } => {
            let query = match (&perm, &route) {
                (Some(p), _) => format!("user={}&perm={}", encode_id(&user), encode_id(p)),
                (None, Some(r)) => format!("user={}&route={}", encode_id(&user), encode_id(r)),
                (None, None) => unreachable!("clap requires one of --perm/--route"),
            };
            let v = client.get(&format!("/admin/check?{query}")).await?;
            let explanation = v["explanation"].as_str().unwrap_or_default().to_string();
            if json_out {
                println!("{v}");
            } else {
                println!("{explanation}");
            }
            if v["allowed"].as_bool() == Some(true) {
                Ok(())
            } else {
                Err(CliError::Denied(
                    v["reason"]["kind"].as_str().unwrap_or("denied").to_string(),
                ))
            }
        }
        Command::SeedDemo { with_credentials } => {
            let mut last = json!({});
            for entity in fixtures::policy() {
                let (path, body) = entity_request(&entity);
                last = client.put(&path, &body).await?;
            }
            for route in fixtures::routes() {
                last = client
                    .put(&route_path(&route.path_prefix), &json!(route))
                    .await?;
            }
            if with_credentials {
                for (username, password, user_id) in fixtures::credentials() {
                    last = client
                        .put(
                            &format!("/admin/credentials/{}", encode_id(username)),
                            &json!({ "password": password, "user_id": user_id }),
                        )
                        .await?;
                }
            }
            print_version(json_out, &last);
            Ok(())
        }
    }
}

async fn list_simple(
    client: &AdminClient,
    json_out: bool,
    collection: &str,
    cols: &[&str],
) -> Result<(), CliError> {
    let v = client.get(&format!("/admin/{collection}")).await?;
    if json_out {
        println!("{v}");
        return Ok(());
    }
    let rows: Vec<Vec<String>> = items(&v)
        .iter()
        .map(|item| cols.iter().map(|c| s(item, c)).collect())
        .collect();
    print_table(cols, &rows);
    Ok(())
}

async fn serve(config_path: PathBuf) -> Result<(), CliError> {
    let config = PlatformConfig::load(&config_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    let store = Store::open(&config.state_file)
        .map_err(|e: StateError| CliError::State(format!("{e}; refusing to start")))?;
    let running = RunningPlatform::start_with_store(config, Arc::new(store), Arc::new(SystemClock))
        .await
        .map_err(|e| CliError::Other(format!("{e:#}")))?;
    println!(
        "listening public={} internal={}",
        running.public_url(),
        running.internal_url()
    );
    if let Some(pw) = &running.bootstrap_password {
        println!("bootstrap admin created: username=root password={pw}");
        println!("this password is shown once; store it now");
    }
    shutdown_signal().await;
    tracing::info!("shutting down");
    running.shutdown().await;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let http = |status| CliError::Http {
            status,
            message: String::new(),
        };
        assert_eq!(http(401).exit_code(), 4);
        assert_eq!(http(403).exit_code(), 5);
        assert_eq!(http(422).exit_code(), 6);
        assert_eq!(http(404).exit_code(), 8);
        assert_eq!(http(500).exit_code(), 1);
        assert_eq!(
            CliError::Network {
                url: String::new(),
                message: String::new()
            }
            .exit_code(),
            7
        );
        assert_eq!(CliError::Denied("NoGrant".into()).exit_code(), 5);
    }

    #[test]
    fn parses_route_add() {
        let cli = Cli::try_parse_from([
            "platform",
            "route",
            "add",
            "/my-product-1",
            "https://product-webapp-1.mydomain.local",
            "--team",
            "Team 1",
            "--desc",
            "Allows internal users to check the revenue data",
        ])
        .unwrap();
        match cli.command {
            Command::Route(RouteCmd::Add(a)) => {
                assert_eq!(a.path, "/my-product-1");
                assert_eq!(a.team, "Team 1");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn check_needs_perm_or_route() {
        assert!(Cli::try_parse_from(["platform", "check", "--user", "bob"]).is_err());
        assert!(Cli::try_parse_from([
            "platform",
            "check",
            "--user",
            "bob",
            "--perm",
            "content.b.read"
        ])
        .is_ok());
    }

    #[test]
    fn route_ids_are_encoded() {
        assert_eq!(
            route_path("/my-product-1"),
            "/admin/routes/%2Fmy%2Dproduct%2D1"
        );
    }
}
