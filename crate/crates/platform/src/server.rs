//! Process composition: open state, bootstrap, bind both listeners, serve.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use platform_core::rbac::{Permission, Role, User};
use platform_core::{Clock, PlatformConfig, Store};
use rand::distributions::Alphanumeric;
use rand::Rng;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::admin::ADMIN_PERMISSION;
use crate::gateway::{router, Gateway};
use crate::routing::ListenerKind;

pub const BOOTSTRAP_USER: &str = "root";
pub const BOOTSTRAP_ROLE: &str = "platform-admin";
pub const SHUTDOWN_GRACE: Duration = Duration::from_secs(10);

/// Creates the `root` administrator on first start. Returns the one-time
/// password, or `None` when `root` already exists.
pub fn bootstrap_admin(store: &Store) -> anyhow::Result<Option<String>> {
    let policy = store.policy();
    if policy.user(BOOTSTRAP_USER).is_some() {
        return Ok(None);
    }
    if policy.permission(ADMIN_PERMISSION).is_none() {
        store.define(Permission {
            id: ADMIN_PERMISSION.into(),
            description: "Manage the platform through the admin API".into(),
        })?;
    }
    let mut role = policy.role(BOOTSTRAP_ROLE).cloned().unwrap_or(Role {
        id: BOOTSTRAP_ROLE.into(),
        name: "Platform administrator".into(),
        permissions: Default::default(),
    });
    role.permissions.insert(ADMIN_PERMISSION.into());
    store.define(role)?;
    store.define(User {
        id: BOOTSTRAP_USER.into(),
        name: "Platform administrator".into(),
        organisation: None,
        roles: [BOOTSTRAP_ROLE.into()].into(),
    })?;
    let password: String = rand::thread_rng()
        .sample_iter(&Alphanumeric)
        .take(24)
        .map(char::from)
        .collect();
    store.set_credentials(BOOTSTRAP_USER, &password, BOOTSTRAP_USER.into())?;
    Ok(Some(password))
}

/// A platform serving on both listeners.
pub struct RunningPlatform {
    pub public_addr: SocketAddr,
    pub internal_addr: SocketAddr,
    pub gateway: Arc<Gateway>,
    pub store: Arc<Store>,
    pub bootstrap_password: Option<String>,
    shutdown: watch::Sender<bool>,
    tasks: Vec<JoinHandle<std::io::Result<()>>>,
}

impl std::fmt::Debug for RunningPlatform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunningPlatform")
            .field("public_addr", &self.public_addr)
            .field("internal_addr", &self.internal_addr)
            .finish_non_exhaustive()
    }
}

impl RunningPlatform {
    /// Opens the configured state file and starts serving.
    pub async fn start(config: PlatformConfig, clock: Arc<dyn Clock>) -> anyhow::Result<Self> {
        config
            .validate()
            .map_err(|e| anyhow::anyhow!("invalid config: {e}"))?;
        let store = Arc::new(Store::open(&config.state_file)?);
        Self::start_with_store(config, store, clock).await
    }

    pub async fn start_with_store(
        config: PlatformConfig,
        store: Arc<Store>,
        clock: Arc<dyn Clock>,
    ) -> anyhow::Result<Self> {
        let bootstrap_password = if config.bootstrap_admin {
            bootstrap_admin(&store)?
        } else {
            None
        };
        let public = TcpListener::bind(&config.public_listen_addr)
            .await
            .with_context(|| format!("binding public listener {}", config.public_listen_addr))?;
        let internal = TcpListener::bind(&config.internal_listen_addr)
            .await
            .with_context(|| {
                format!("binding internal listener {}", config.internal_listen_addr)
            })?;
        let public_addr = public.local_addr()?;
        let internal_addr = internal.local_addr()?;
        let gateway = Gateway::new(config, store.clone(), clock)?;

        let (shutdown, _) = watch::channel(false);
        let mut tasks = Vec::new();
        for (listener, kind) in [
            (public, ListenerKind::Public),
            (internal, ListenerKind::Internal),
        ] {
            let app =
                router(gateway.clone(), kind).into_make_service_with_connect_info::<SocketAddr>();
            let mut rx = shutdown.subscribe();
            tasks.push(tokio::spawn(async move {
                axum::serve(listener, app)
                    .with_graceful_shutdown(async move {
                        let _ = rx.wait_for(|stop| *stop).await;
                    })
                    .await
            }));
        }
        tracing::info!(%public_addr, %internal_addr, "platform listening");
        Ok(RunningPlatform {
            public_addr,
            internal_addr,
            gateway,
            store,
            bootstrap_password,
            shutdown,
            tasks,
        })
    }

    pub fn public_url(&self) -> String {
        format!("http://{}", self.public_addr)
    }

    pub fn internal_url(&self) -> String {
        format!("http://{}", self.internal_addr)
    }

    /// Stops accepting connections and waits up to [`SHUTDOWN_GRACE`] for
    /// in-flight requests.
    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        let drain = futures_util::future::join_all(self.tasks);
        if tokio::time::timeout(SHUTDOWN_GRACE, drain).await.is_err() {
            tracing::warn!("in-flight requests did not drain within {SHUTDOWN_GRACE:?}");
        }
    }
}

/// Resolves on SIGINT or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
}
