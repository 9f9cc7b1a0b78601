//! Demo data: the two-product route table and the Alice/Bob access policy.

use platform_core::rbac::{Entity, Organisation, Permission, Role, User};
use platform_core::RouteEntry;

pub const ALICE_PASSWORD: &str = "correct horse 9";
pub const BOB_PASSWORD: &str = "battery staple 7";

pub fn routes() -> Vec<RouteEntry> {
    vec![
        RouteEntry {
            owning_team: "Team 1".into(),
            description: "Allows internal users to check the revenue data".into(),
            ..RouteEntry::new("/my-product-1", "https://product-webapp-1.mydomain.local")
        },
        RouteEntry {
            owning_team: "Team 2".into(),
            description: "Allows users to set up reporting dashboards".into(),
            ..RouteEntry::new("/my-product-2", "https://product-webapp-1.mydomain.local")
        },
    ]
}

fn perm(id: &str, description: &str) -> Entity {
    Permission {
        id: id.into(),
        description: description.into(),
    }
    .into()
}

/// Entities in dependency order (permissions, organisations, roles, users).
pub fn policy() -> Vec<Entity> {
    vec![
        perm("content.a.read", "Access Content A"),
        perm("content.b.read", "Access Content B"),
        perm("content.read", "Read-only access to shared content"),
        perm("user.remove", "Remove a registered user"),
        Organisation {
            id: "org-a".into(),
            name: "Organisation A".into(),
            permissions: ["content.a.read".into()].into(),
        }
        .into(),
        Organisation {
            id: "org-b".into(),
            name: "Organisation B".into(),
            permissions: Default::default(),
        }
        .into(),
        Role {
            id: "admin".into(),
            name: "Admin".into(),
            permissions: ["user.remove".into()].into(),
        }
        .into(),
        Role {
            id: "member".into(),
            name: "Member".into(),
            permissions: ["content.read".into()].into(),
        }
        .into(),
        User {
            id: "alice".into(),
            name: "Alice".into(),
            organisation: Some("org-a".into()),
            roles: ["admin".into()].into(),
        }
        .into(),
        User {
            id: "bob".into(),
            name: "Bob".into(),
            organisation: Some("org-b".into()),
            roles: ["member".into()].into(),
        }
        .into(),
    ]
}

/// `(username, password, user id)` for the demo users.
pub fn credentials() -> Vec<(&'static str, &'static str, &'static str)> {
    vec![
        ("alice", ALICE_PASSWORD, "alice"),
        ("bob", BOB_PASSWORD, "bob"),
    ]
}
