//! Platform state: routes, policy and credentials in one versioned JSON file.
//!
//! All mutations go through a single writer. Each commit builds a new
//! [`Snapshot`], writes it to a temp file in the target directory, fsyncs and
//! renames it over the state file, and only then publishes it to readers.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::auth::{AuthError, Credential, CredentialStore};
use crate::rbac::{
    Entity, EntityKind, Organisation, Permission, Policy, RbacError, Role, User, UserId,
};
use crate::repository::{RouteEntry, RouteError, RouteTable};

/// On-disk schema.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub version: u64,
    #[serde(default)]
    pub routes: Vec<RouteEntry>,
    #[serde(default)]
    pub permissions: Vec<Permission>,
    #[serde(default)]
    pub roles: Vec<Role>,
    #[serde(default)]
    pub organisations: Vec<Organisation>,
    #[serde(default)]
    pub users: Vec<User>,
    #[serde(default)]
    pub credentials: Vec<Credential>,
}

#[derive(Debug, thiserror::Error)]
pub enum StateError {
    #[error("reading state file {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("state file {path} is corrupt: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("writing state file {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error(transparent)]
    Rbac(#[from] RbacError),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error("no credentials for username {0:?}")]
    CredentialNotFound(String),
    #[error("route {route} requires undefined permission {permission}")]
    UndefinedRoutePermission { route: String, permission: String },
    #[error("permission {permission} is still required by route {route}")]
    PermissionRequiredByRoute { permission: String, route: String },
    #[error(transparent)]
    Persist(#[from] StateError),
}

/// Immutable view of the whole platform state at one version.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub version: u64,
    pub routes: Arc<RouteTable>,
    pub policy: Arc<Policy>,
    pub credentials: Arc<CredentialStore>,
}

impl Snapshot {
    pub fn to_file(&self) -> StateFile {
        StateFile {
            version: self.version,
            routes: self.routes.entries().cloned().collect(),
            permissions: self.policy.permissions().cloned().collect(),
            roles: self.policy.roles().cloned().collect(),
            organisations: self.policy.organisations().cloned().collect(),
            users: self.policy.users().cloned().collect(),
            credentials: self.credentials.iter().cloned().collect(),
        }
    }

    /// Rebuilds a snapshot, re-checking every invariant the writers enforce.
    pub fn from_file(file: StateFile) -> Result<Self, String> {
        let routes =
            RouteTable::from_entries(file.version, file.routes).map_err(|e| e.to_string())?;
        let mut policy = Policy::new();
        let entities = file
            .permissions
            .into_iter()
            .map(Entity::from)
            .chain(file.organisations.into_iter().map(Entity::from))
            .chain(file.roles.into_iter().map(Entity::from))
            .chain(file.users.into_iter().map(Entity::from));
        for entity in entities {
            policy.define(entity).map_err(|e| e.to_string())?;
        }
        let credentials =
            CredentialStore::from_records(file.credentials).map_err(|e| e.to_string())?;
        Ok(Snapshot {
            version: file.version,
            routes: Arc::new(routes),
            policy: Arc::new(policy),
            credentials: Arc::new(credentials),
        })
    }
}

/// Reads the state file. A missing file is an empty state at version 0.
pub fn load_state(path: &Path) -> Result<Snapshot, StateError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Snapshot::default()),
        Err(source) => {
            return Err(StateError::Read {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let corrupt = |reason: String| StateError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let file: StateFile = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
    Snapshot::from_file(file).map_err(corrupt)
}

/// Replaces `path` with `contents` via temp file + fsync + rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::Builder::new()
        .prefix(".state-")
        .suffix(".tmp")
        .tempfile_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    // Directory fsync makes the rename itself durable; not supported everywhere.
    if let Ok(d) = fs::File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

type CommitHook = Box<dyn Fn(&Arc<Snapshot>) + Send + Sync>;

/// Single-writer, many-reader platform state.
pub struct Store {
    path: Option<PathBuf>,
    writer: Mutex<()>,
    current: RwLock<Arc<Snapshot>>,
    hooks: RwLock<Vec<CommitHook>>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("path", &self.path)
            .field("version", &self.version())
            .finish_non_exhaustive()
    }
}

impl Store {
    /// Opens (or starts empty at) the given state file. Refuses corrupt files.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StateError> {
        let path = path.into();
        let snapshot = load_state(&path)?;
        Ok(Store {
            path: Some(path),
            writer: Mutex::new(()),
            current: RwLock::new(Arc::new(snapshot)),
            hooks: RwLock::new(Vec::new()),
        })
    }

    /// A store that never touches disk.
    pub fn in_memory() -> Self {
        Store {
            path: None,
            writer: Mutex::new(()),
            current: RwLock::new(Arc::new(Snapshot::default())),
            hooks: RwLock::new(Vec::new()),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().clone()
    }

    pub fn version(&self) -> u64 {
        self.current.read().version
    }

    /// Current route table; later mutations never alter the returned value.
    pub fn routes(&self) -> Arc<RouteTable> {
        self.current.read().routes.clone()
    }

    pub fn policy(&self) -> Arc<Policy> {
        self.current.read().policy.clone()
    }

    /// Registers a callback run after every commit, in commit order.
    pub fn on_commit(&self, hook: impl Fn(&Arc<Snapshot>) + Send + Sync + 'static) {
        self.hooks.write().push(Box::new(hook));
    }

    fn commit(
        &self,
        mutate: impl FnOnce(&Snapshot, u64) -> Result<Snapshot, StoreError>,
    ) -> Result<u64, StoreError> {
        let _guard = self.writer.lock();
        let current = self.snapshot();
        let version = current.version + 1;
        let mut next = mutate(&current, version)?;
        next.version = version;
        if let Some(path) = &self.path {
            let bytes = serde_json::to_vec_pretty(&next.to_file()).expect("state serializes");
            write_atomic(path, &bytes).map_err(|source| StateError::Write {
                path: path.clone(),
                source,
            })?;
        }
        let next = Arc::new(next);
        *self.current.write() = next.clone();
        for hook in self.hooks.read().iter() {
            hook(&next);
        }
        Ok(version)
    }

    pub fn upsert_route(&self, entry: RouteEntry) -> Result<u64, StoreError> {
        entry.validate()?;
        self.commit(|cur, version| {
            if let Some(perm) = &entry.required_permission {
                if cur.policy.permission(perm.as_str()).is_none() {
                    return Err(StoreError::UndefinedRoutePermission {
                        route: entry.path_prefix.clone(),
                        permission: perm.to_string(),
                    });
                }
            }
            Ok(Snapshot {
                routes: Arc::new(cur.routes.with_upsert(entry, version)?),
                ..cur.clone()
            })
        })
    }

    pub fn remove_route(&self, path_prefix: &str) -> Result<u64, StoreError> {
        self.commit(|cur, version| {
            Ok(Snapshot {
                routes: Arc::new(cur.routes.with_removed(path_prefix, version)?),
                ..cur.clone()
            })
        })
    }

    pub fn define(&self, entity: impl Into<Entity>) -> Result<u64, StoreError> {
        let entity = entity.into();
        self.commit(|cur, _| {
            let mut policy = (*cur.policy).clone();
            policy.define(entity)?;
            Ok(Snapshot {
                policy: Arc::new(policy),
                ..cur.clone()
            })
        })
    }

    pub fn remove_entity(&self, kind: EntityKind, id: &str) -> Result<u64, StoreError> {
        self.commit(|cur, _| {
            if kind == EntityKind::Permission {
                let holder = cur.routes.entries().find(|r| {
                    r.required_permission
                        .as_ref()
                        .is_some_and(|p| p.as_str() == id)
                });
                if let Some(route) = holder {
                    return Err(StoreError::PermissionRequiredByRoute {
                        permission: id.to_string(),
                        route: route.path_prefix.clone(),
                    });
                }
            }
            let mut policy = (*cur.policy).clone();
            policy.remove(kind, id)?;
            Ok(Snapshot {
                policy: Arc::new(policy),
                ..cur.clone()
            })
        })
    }

    /// Hashes outside the writer lock, then stores the credential.
    pub fn set_credentials(
        &self,
        username: &str,
        password: &str,
        user_id: UserId,
    ) -> Result<u64, StoreError> {
        let cred = Credential::new(username, password, user_id)?;
        self.commit(|cur, _| {
            let mut creds = (*cur.credentials).clone();
            creds.insert(cred);
            Ok(Snapshot {
                credentials: Arc::new(creds),
                ..cur.clone()
            })
        })
    }

    pub fn remove_credentials(&self, username: &str) -> Result<u64, StoreError> {
        self.commit(|cur, _| {
            let mut creds = (*cur.credentials).clone();
            creds
                .remove(username)
                .ok_or_else(|| StoreError::CredentialNotFound(username.to_string()))?;
            Ok(Snapshot {
                credentials: Arc::new(creds),
                ..cur.clone()
            })
        })
    }
}
