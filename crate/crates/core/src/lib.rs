//! Core domain of the SaaS platform gateway: the web app repository, the RBAC
//! engine, credential and token handling, and the persisted platform state.

pub mod auth;
pub mod clock;
pub mod config;
pub mod rbac;
pub mod repository;
pub mod state;

pub use auth::{
    AuthError, Credential, CredentialStore, Identity, TokenClaims, TokenError, TokenSigner,
};
pub use clock::{Clock, FixedClock, SystemClock};
pub use config::{ConfigError, PlatformConfig};
pub use rbac::{
    Decision, Entity, EntityKind, Organisation, OrganisationId, Permission, PermissionId, Policy,
    RbacError, Reason, Role, RoleId, User, UserId,
};
pub use repository::{lookup, AuthMode, RouteEntry, RouteError, RouteTable, Visibility};
pub use state::{Snapshot, StateError, StateFile, Store, StoreError};
