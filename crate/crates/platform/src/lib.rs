//! The platform gateway: a public and an internal listener that route requests
//! to registered product web apps, enforce visibility, authentication placement
//! and RBAC, and expose the auth and admin endpoints.

pub mod admin;
pub mod auth_http;
pub mod cli;
pub mod fixtures;
pub mod gateway;
pub mod harness;
pub mod routing;
pub mod server;

pub use gateway::{Gateway, StaleVersion};
pub use routing::{authorize, resolve, AuthzOutcome, ListenerKind, RouteDecision};
pub use server::RunningPlatform;
